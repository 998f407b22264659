use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    build_schedule, cfg_combine, ddim_step, sample_initial_latent, BetaProfile, Latent, RgbImage,
    ToyBackend,
};
use crate::edit::EditedEmbedding;
use crate::error::{Error, Result};
use crate::text_encoder::PromptEmbedding;

/// Denoising steps per generation.
pub const DEFAULT_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendId {
    Toy,
    Sd14,
}

impl BackendId {
    /// Conventional guidance scale for the backend.
    pub fn default_cfg_scale(self) -> f32 {
        match self {
            BackendId::Toy => 1.0,
            BackendId::Sd14 => 7.5,
        }
    }
}

impl fmt::Display for BackendId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendId::Toy => "toy",
            BackendId::Sd14 => "sd14",
        })
    }
}

impl FromStr for BackendId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(BackendId::Toy),
            "sd14" | "sd14-adapter" => Ok(BackendId::Sd14),
            other => Err(Error::Input(format!("unknown backend {other:?}"))),
        }
    }
}

/// Noise predictor plus latent decoder.
///
/// A Stable Diffusion 1.4 adapter implements this with the UNet as
/// `predict_noise` (conditioning = encoder hidden states) and the VAE decoder
/// (after the 1/0.18215 latent scaling) as `decode`.
pub trait DiffusionBackend: Send + Sync {
    fn id(&self) -> BackendId;
    fn latent_shape(&self) -> [usize; 3];
    fn train_schedule(&self) -> (usize, BetaProfile);
    fn predict_noise(&self, latent: &Latent, t: usize, conditioning: &PromptEmbedding) -> Result<Latent>;
    fn decode(&self, latent: &Latent) -> Result<RgbImage>;
}

/// Instantiates a built-in backend for encoders of width `d_model`.
pub fn backend_for(id: BackendId, d_model: usize) -> Result<Box<dyn DiffusionBackend>> {
    match id {
        BackendId::Toy => Ok(Box::new(ToyBackend::new(d_model)?)),
        BackendId::Sd14 => Err(Error::Backend(
            "the sd14 UNet/VAE adapter is not included in this build; use --backend toy".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Conditioning {
    Prompt(PromptEmbedding),
    Edited(EditedEmbedding),
}

impl Conditioning {
    pub fn embedding(&self) -> &PromptEmbedding {
        match self {
            Conditioning::Prompt(e) => e,
            Conditioning::Edited(e) => &e.embedding,
        }
    }
}

impl From<PromptEmbedding> for Conditioning {
    fn from(e: PromptEmbedding) -> Self {
        Conditioning::Prompt(e)
    }
}

impl From<EditedEmbedding> for Conditioning {
    fn from(e: EditedEmbedding) -> Self {
        Conditioning::Edited(e)
    }
}

#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub conditioning: Conditioning,
    /// Empty-prompt embedding; never edited.
    pub unconditional: PromptEmbedding,
    pub seed: u64,
    pub steps: usize,
    pub cfg_scale: f32,
    pub backend_id: BackendId,
}

impl GenerationRequest {
    /// Request with the default step count and the backend's default guidance.
    pub fn new(
        conditioning: impl Into<Conditioning>,
        unconditional: PromptEmbedding,
        seed: u64,
        backend_id: BackendId,
    ) -> Self {
        Self {
            conditioning: conditioning.into(),
            unconditional,
            seed,
            steps: DEFAULT_STEPS,
            cfg_scale: backend_id.default_cfg_scale(),
            backend_id,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Parameter("steps must be at least 1".into()));
        }
        if !(self.cfg_scale.is_finite() && self.cfg_scale >= 0.0) {
            return Err(Error::Parameter(format!(
                "cfg scale must be finite and nonnegative, got {}",
                self.cfg_scale
            )));
        }
        let (c, u) = (self.conditioning.embedding(), &self.unconditional);
        if c.hidden().shape() != u.hidden().shape() {
            return Err(Error::Shape {
                what: "unconditional embedding".into(),
                expected: c.hidden().shape().to_vec(),
                found: u.hidden().shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn provenance(&self) -> Provenance {
        let (target_prompt, w) = match &self.conditioning {
            Conditioning::Prompt(_) => (None, None),
            Conditioning::Edited(e) => (Some(e.target_prompt.clone()), Some(e.applied_w)),
        };
        Provenance {
            prompt: self.conditioning.embedding().prompt_text().to_owned(),
            target_prompt,
            w,
            unconditional_prompt: self.unconditional.prompt_text().to_owned(),
            seed: self.seed,
            steps: self.steps,
            cfg_scale: self.cfg_scale,
            backend: self.backend_id,
            sampler: "ddim-eta0".into(),
        }
    }
}

/// Everything needed to reproduce one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub prompt: String,
    pub target_prompt: Option<String>,
    pub w: Option<f32>,
    pub unconditional_prompt: String,
    pub seed: u64,
    pub steps: usize,
    pub cfg_scale: f32,
    pub backend: BackendId,
    pub sampler: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub image: RgbImage,
    pub latent: Latent,
    pub latent_digest: String,
    pub provenance: Provenance,
}

/// Seeded latent, then per timestep: both predictions, guidance, DDIM step;
/// finally decode.
pub fn generate(backend: &dyn DiffusionBackend, request: &GenerationRequest) -> Result<ImageResult> {
    request.validate()?;
    if backend.id() != request.backend_id {
        return Err(Error::Backend(format!(
            "request targets backend {} but {} was supplied",
            request.backend_id,
            backend.id()
        )));
    }
    let (train_steps, profile) = backend.train_schedule();
    let schedule = build_schedule(train_steps, request.steps, profile)?;
    let cond = request.conditioning.embedding();
    let uncond = &request.unconditional;

    let mut latent = sample_initial_latent(request.seed, backend.latent_shape());
    let timesteps = schedule.timesteps();
    for (step, &t) in timesteps.iter().enumerate() {
        let (eps_uncond, eps_cond) = rayon::join(
            || backend.predict_noise(&latent, t, uncond),
            || backend.predict_noise(&latent, t, cond),
        );
        let eps = cfg_combine(&eps_uncond?, &eps_cond?, request.cfg_scale)?;
        latent = ddim_step(&latent, &eps, t, timesteps.get(step + 1).copied(), &schedule)?;
        if !latent.is_finite() {
            return Err(Error::Numeric {
                what: "latent".into(),
                step,
                timestep: t,
            });
        }
    }

    let image = backend.decode(&latent)?;
    Ok(ImageResult {
        image,
        latent_digest: latent.digest(),
        latent,
        provenance: request.provenance(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;
    use crate::tokenizer::TokenSequence;

    fn emb(text: &str, v: f32) -> PromptEmbedding {
        let data = (0..4 * 8).map(|k| v * ((k % 5) as f32 - 2.0)).collect();
        PromptEmbedding::new(
            Matrix::from_vec(4, 8, data).unwrap(),
            TokenSequence::from_ids(vec![1, 7, 2, 2], 1, 2).unwrap(),
            text,
        )
        .unwrap()
    }

    #[test]
    fn defaults() {
        let req = GenerationRequest::new(emb("a", 1.0), emb("", 0.0), 7, BackendId::Toy);
        assert_eq!(req.steps, 50);
        assert_eq!(req.cfg_scale, 1.0);
        assert_eq!(BackendId::Sd14.default_cfg_scale(), 7.5);
    }

    #[test]
    fn deterministic_generation() {
        let toy = ToyBackend::new(8).unwrap();
        let req = GenerationRequest::new(emb("a", 1.0), emb("", 0.0), 7, BackendId::Toy);
        let a = generate(&toy, &req).unwrap();
        let b = generate(&toy, &req).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.provenance.steps, 50);
    }

    #[test]
    fn backend_mismatch_and_bad_params() {
        let toy = ToyBackend::new(8).unwrap();
        let mut req = GenerationRequest::new(emb("a", 1.0), emb("", 0.0), 7, BackendId::Sd14);
        assert!(matches!(generate(&toy, &req), Err(Error::Backend(_))));
        req.backend_id = BackendId::Toy;
        req.steps = 0;
        assert!(matches!(generate(&toy, &req), Err(Error::Parameter(_))));
        req.steps = 5;
        req.cfg_scale = f32::NAN;
        assert!(generate(&toy, &req).is_err());
    }

    #[test]
    fn sd14_is_not_built_in() {
        assert!(matches!(backend_for(BackendId::Sd14, 768), Err(Error::Backend(_))));
        assert_eq!("sd14".parse::<BackendId>().unwrap(), BackendId::Sd14);
        assert!("dalle".parse::<BackendId>().is_err());
    }

    #[test]
    fn non_finite_latent_names_the_step() {
        struct Exploding;
        impl DiffusionBackend for Exploding {
            fn id(&self) -> BackendId {
                BackendId::Toy
            }
            fn latent_shape(&self) -> [usize; 3] {
                [1, 1, 2]
            }
            fn train_schedule(&self) -> (usize, BetaProfile) {
                (1000, BetaProfile::ScaledLinear)
            }
            fn predict_noise(&self, l: &Latent, t: usize, _: &PromptEmbedding) -> Result<Latent> {
                let v = if t < 500 { f32::INFINITY } else { 0.0 };
                Latent::new(l.shape(), vec![v; 2])
            }
            fn decode(&self, _: &Latent) -> Result<RgbImage> {
                unreachable!()
            }
        }
        let mut req = GenerationRequest::new(emb("a", 1.0), emb("", 0.0), 1, BackendId::Toy);
        req.steps = 10;
        match generate(&Exploding, &req) {
            Err(Error::Numeric { step, timestep, .. }) => assert_eq!((step, timestep), (5, 400)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
