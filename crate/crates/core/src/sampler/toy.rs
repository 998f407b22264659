//! Desk-scale denoiser.
//!
//! A fixed, seeded affine map of (latent, mean-pooled conditioning, `<EOS>`
//! row, timestep embedding). The conditioning sets a target clean latent
//! `mu = P * pool + E * eos`; the prediction is the exact noise for a point
//! mass at `mu`, plus a small random latent mixing term and a timestep bias:
//!
//! ```text
//! eps(x, t, c) = (x - sqrt(a_t) mu(c)) / sqrt(1 - a_t) + M x + T temb(t) + b
//! ```
//!
//! DDIM therefore converges toward `mu(c)`, so any change to the `<EOS>` row
//! shows up in the final latent and the decoded image.

use super::{
    build_schedule, BackendId, BetaProfile, DiffusionBackend, GaussianStream, Latent,
    NoiseSchedule, RgbImage,
};
use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix};
use crate::text_encoder::PromptEmbedding;

pub const TOY_LATENT_SHAPE: [usize; 3] = [4, 8, 8];
const TOY_WEIGHT_SEED: u64 = 0x746f_795f_6465_6e6f;
const TIME_DIM: usize = 16;
const TRAIN_STEPS: usize = 1000;
const UPSCALE: usize = 8;

/// Latent channel -> RGB projection (rows are channels).
const LATENT_RGB: [[f32; 3]; 4] = [
    [0.298, 0.207, 0.208],
    [0.187, 0.286, 0.173],
    [-0.158, 0.189, 0.264],
    [-0.184, -0.271, -0.473],
];

#[derive(Debug, Clone)]
pub struct ToyBackend {
    d_model: usize,
    pool_proj: Matrix,
    eos_proj: Matrix,
    mix: Matrix,
    time_proj: Matrix,
    bias: Vec<f32>,
    schedule: NoiseSchedule,
}

fn random_matrix(rng: &mut GaussianStream, rows: usize, cols: usize, scale: f32) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.next_normal() * scale).collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

impl ToyBackend {
    pub fn new(d_model: usize) -> Result<Self> {
        if d_model == 0 {
            return Err(Error::Parameter("toy backend needs d_model > 0".into()));
        }
        let n: usize = TOY_LATENT_SHAPE.iter().product();
        let mut rng = GaussianStream::new(TOY_WEIGHT_SEED);
        let cond_scale = 1.0 / (d_model as f32).sqrt();
        Ok(Self {
            d_model,
            pool_proj: random_matrix(&mut rng, n, d_model, cond_scale),
            eos_proj: random_matrix(&mut rng, n, d_model, cond_scale),
            mix: random_matrix(&mut rng, n, n, 0.05 / (n as f32).sqrt()),
            time_proj: random_matrix(&mut rng, n, TIME_DIM, 0.01 / (TIME_DIM as f32).sqrt()),
            bias: (0..n).map(|_| rng.next_normal() * 0.01).collect(),
            schedule: build_schedule(TRAIN_STEPS, TRAIN_STEPS, BetaProfile::ScaledLinear)?,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// Sinusoidal timestep features.
    fn time_embedding(t: usize) -> [f32; TIME_DIM] {
        let half = TIME_DIM / 2;
        let mut out = [0.0f32; TIME_DIM];
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            let arg = t as f64 * freq;
            out[i] = arg.sin() as f32;
            out[half + i] = arg.cos() as f32;
        }
        out
    }

    /// The conditioning-independent part `T temb(t) + b`.
    pub fn time_bias(&self, t: usize) -> Vec<f32> {
        let temb = Self::time_embedding(t);
        self.bias
            .iter()
            .enumerate()
            .map(|(i, b)| dot(self.time_proj.row(i), &temb) + b)
            .collect()
    }

    /// Conditioning target `mu = P * mean_rows(hidden) + E * hidden[eos]`.
    pub fn target_latent(&self, conditioning: &PromptEmbedding) -> Result<Vec<f32>> {
        if conditioning.d_model() != self.d_model {
            return Err(Error::shape(
                "toy conditioning",
                &[conditioning.context_len(), self.d_model],
                &conditioning.hidden().shape(),
            ));
        }
        let hidden = conditioning.hidden();
        let mut pool = vec![0.0f32; self.d_model];
        for row in hidden.row_iter() {
            for (p, v) in pool.iter_mut().zip(row) {
                *p += v;
            }
        }
        let rows = hidden.rows() as f32;
        pool.iter_mut().for_each(|p| *p /= rows);
        let eos = hidden.row(conditioning.eos_index());
        Ok((0..self.bias.len())
            .map(|i| dot(self.pool_proj.row(i), &pool) + dot(self.eos_proj.row(i), eos))
            .collect())
    }

    pub fn toy_denoise(&self, latent: &Latent, t: usize, conditioning: &PromptEmbedding) -> Result<Latent> {
        if latent.shape() != TOY_LATENT_SHAPE {
            return Err(Error::shape("toy latent", &TOY_LATENT_SHAPE, &latent.shape()));
        }
        if t >= TRAIN_STEPS {
            return Err(Error::Parameter(format!("timestep {t} outside [0, {TRAIN_STEPS})")));
        }
        let mu = self.target_latent(conditioning)?;
        let a = self.schedule.alpha_bar(t);
        let (sa, inv_sb) = (a.sqrt() as f32, (1.0 / (1.0 - a).sqrt()) as f32);
        let x = latent.as_slice();
        let data = self
            .time_bias(t)
            .into_iter()
            .enumerate()
            .map(|(i, tb)| (x[i] - sa * mu[i]) * inv_sb + dot(self.mix.row(i), x) + tb)
            .collect();
        Latent::new(TOY_LATENT_SHAPE, data)
    }
}

impl DiffusionBackend for ToyBackend {
    fn id(&self) -> BackendId {
        BackendId::Toy
    }

    fn latent_shape(&self) -> [usize; 3] {
        TOY_LATENT_SHAPE
    }

    fn train_schedule(&self) -> (usize, BetaProfile) {
        (TRAIN_STEPS, BetaProfile::ScaledLinear)
    }

    fn predict_noise(&self, latent: &Latent, t: usize, conditioning: &PromptEmbedding) -> Result<Latent> {
        self.toy_denoise(latent, t, conditioning)
    }

    /// Fixed channel->RGB projection, `tanh` squash, nearest-neighbour 8x.
    fn decode(&self, latent: &Latent) -> Result<RgbImage> {
        if latent.shape() != TOY_LATENT_SHAPE {
            return Err(Error::shape("toy latent", &TOY_LATENT_SHAPE, &latent.shape()));
        }
        let [c, h, w] = TOY_LATENT_SHAPE;
        let x = latent.as_slice();
        let (ow, oh) = (w * UPSCALE, h * UPSCALE);
        let mut pixels = vec![0u8; ow * oh * 3];
        for py in 0..oh {
            for px in 0..ow {
                let idx = (py / UPSCALE) * w + px / UPSCALE;
                for (rgb, slot) in pixels[(py * ow + px) * 3..][..3].iter_mut().enumerate() {
                    let v: f32 = (0..c).map(|ch| LATENT_RGB[ch][rgb] * x[ch * h * w + idx]).sum();
                    *slot = ((v.tanh() + 1.0) * 0.5 * 255.0).round() as u8;
                }
            }
        }
        RgbImage::new(ow, oh, pixels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::TokenSequence;

    fn cond(fill: impl Fn(usize, usize) -> f32) -> PromptEmbedding {
        let data = (0..6 * 8).map(|k| fill(k / 8, k % 8)).collect();
        PromptEmbedding::new(
            Matrix::from_vec(6, 8, data).unwrap(),
            TokenSequence::from_ids(vec![1, 5, 2, 2, 2, 2], 1, 2).unwrap(),
            "",
        )
        .unwrap()
    }

    #[test]
    fn deterministic() {
        let toy = ToyBackend::new(8).unwrap();
        let x = super::super::sample_initial_latent(3, TOY_LATENT_SHAPE);
        let c = cond(|r, k| (r as f32 - k as f32) * 0.1);
        assert_eq!(toy.toy_denoise(&x, 500, &c).unwrap(), toy.toy_denoise(&x, 500, &c).unwrap());
        let again = ToyBackend::new(8).unwrap();
        assert_eq!(toy.toy_denoise(&x, 500, &c).unwrap(), again.toy_denoise(&x, 500, &c).unwrap());
    }

    #[test]
    fn eos_row_changes_prediction() {
        let toy = ToyBackend::new(8).unwrap();
        let x = super::super::sample_initial_latent(3, TOY_LATENT_SHAPE);
        let a = cond(|r, k| (r * k) as f32 * 0.05);
        let b = cond(|r, k| if r == 2 { 1.0 } else { (r * k) as f32 * 0.05 });
        assert_ne!(toy.toy_denoise(&x, 10, &a).unwrap(), toy.toy_denoise(&x, 10, &b).unwrap());
    }

    #[test]
    fn zero_inputs_give_time_bias() {
        let toy = ToyBackend::new(8).unwrap();
        let x = Latent::zeros(TOY_LATENT_SHAPE).unwrap();
        let out = toy.toy_denoise(&x, 250, &cond(|_, _| 0.0)).unwrap();
        assert!(out.is_finite());
        assert_eq!(out.as_slice(), toy.time_bias(250).as_slice());
    }

    #[test]
    fn shape_checks() {
        let toy = ToyBackend::new(8).unwrap();
        let bad = Latent::zeros([4, 4, 4]).unwrap();
        assert!(toy.toy_denoise(&bad, 0, &cond(|_, _| 0.0)).is_err());
        let wide = ToyBackend::new(16).unwrap();
        let x = Latent::zeros(TOY_LATENT_SHAPE).unwrap();
        assert!(wide.toy_denoise(&x, 0, &cond(|_, _| 0.0)).is_err());
    }

    #[test]
    fn decode_size() {
        let toy = ToyBackend::new(8).unwrap();
        let img = toy.decode(&Latent::zeros(TOY_LATENT_SHAPE).unwrap()).unwrap();
        assert_eq!((img.width(), img.height()), (64, 64));
        assert!(img.pixels().iter().all(|&p| p == 128));
    }
}
