//! Deterministic diffusion sampling: noise schedule, seeded initial latents,
//! classifier-free guidance, DDIM (eta = 0) and pluggable denoising backends.

mod ddim;
mod generate;
mod image;
mod noise;
mod schedule;
mod toy;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use self::ddim::{cfg_combine, ddim_step, predict_x0};
pub use self::generate::{
    backend_for, generate, BackendId, Conditioning, DiffusionBackend, GenerationRequest,
    ImageResult, Provenance, DEFAULT_STEPS,
};
pub use self::image::RgbImage;
pub use self::noise::{sample_initial_latent, GaussianStream};
pub use self::schedule::{build_schedule, BetaProfile, NoiseSchedule};
pub use self::toy::{ToyBackend, TOY_LATENT_SHAPE};

/// Channel-major latent tensor `[channels, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    shape: [usize; 3],
    data: Vec<f32>,
}

impl Latent {
    pub fn new(shape: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n == 0 {
            return Err(Error::Parameter(format!("latent shape {shape:?} is empty")));
        }
        if data.len() != n {
            return Err(Error::shape("latent buffer", &[n], &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 3]) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// SHA-256 over the shape and little-endian `f32` values, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for d in self.shape {
            h.update((d as u64).to_le_bytes());
        }
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub(crate) fn check_same_shape(&self, other: &Latent, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(what, &self.shape, &other.shape));
        }
        Ok(())
    }
}
