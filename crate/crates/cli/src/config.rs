//! Run configuration: a TOML file overlaid with command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use eos_edit_core::{BackendId, EncoderConfig, Error, Result, DEFAULT_GUIDANCE, DEFAULT_STEPS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Flags shared by every verb. Each one, when given, overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration; relative paths inside it resolve against its directory
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// CLIP token->id listing (vocab.json)
    #[arg(long, global = true, value_name = "PATH")]
    pub vocab: Option<PathBuf>,
    /// Ranked BPE merges (merges.txt)
    #[arg(long, global = true, value_name = "PATH")]
    pub merges: Option<PathBuf>,
    /// Text encoder weights (safetensors)
    #[arg(long, global = true, value_name = "PATH")]
    pub encoder_weights: Option<PathBuf>,
    /// Encoder hyperparameters (config.json); defaults to the file next to the weights
    #[arg(long, global = true, value_name = "PATH")]
    pub encoder_config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "toy|sd14")]
    pub backend: Option<BackendId>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Denoising steps [default: 50]
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Classifier-free guidance scale [default: 1.0 toy, 7.5 sd14]
    #[arg(long = "cfg", global = true, value_name = "FLOAT")]
    pub cfg_scale: Option<f32>,
    /// Target <EOS> guidance scale [default: 1.0]
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub w: Option<f32>,
    /// Output directory [default: out]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// On-disk form; every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    vocab: Option<PathBuf>,
    merges: Option<PathBuf>,
    encoder_weights: Option<PathBuf>,
    encoder_config: Option<PathBuf>,
    backend: Option<BackendId>,
    steps: Option<usize>,
    cfg_scale: Option<f32>,
    w: Option<f32>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub vocab: PathBuf,
    pub merges: PathBuf,
    pub encoder_weights: Option<PathBuf>,
    pub encoder_config: Option<PathBuf>,
    pub backend: BackendId,
    pub steps: usize,
    pub cfg_scale: f32,
    pub w: f32,
    pub seed: u64,
    pub out: PathBuf,
}

fn read_file(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
    let mut file: ConfigFile = toml::from_str(&text).map_err(|e| Error::Parse {
        line: e
            .span()
            .map_or(0, |s| text[..s.start].matches('\n').count() + 1),
        message: format!("{}: {}", path.display(), e.message()),
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [
        &mut file.vocab,
        &mut file.merges,
        &mut file.encoder_weights,
        &mut file.encoder_config,
    ]
    .into_iter()
    .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(file)
}

fn existing(path: PathBuf, what: &str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Input(format!("{what} {} does not exist", path.display())))
    }
}

impl RunConfig {
    pub fn resolve(flags: &Overrides) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => read_file(path)?,
            None => ConfigFile::default(),
        };
        let pick = |flag: &Option<PathBuf>, from_file: Option<PathBuf>| flag.clone().or(from_file);
        let backend = flags.backend.or(file.backend).unwrap_or(BackendId::Toy);
        let vocab = pick(&flags.vocab, file.vocab)
            .ok_or_else(|| Error::Input("no vocabulary: pass --vocab or set `vocab` in --config".into()))?;
        let merges = pick(&flags.merges, file.merges)
            .ok_or_else(|| Error::Input("no merges: pass --merges or set `merges` in --config".into()))?;
        let encoder_weights = pick(&flags.encoder_weights, file.encoder_weights)
            .map(|p| existing(p, "encoder weights"))
            .transpose()?;
        let encoder_config = match pick(&flags.encoder_config, file.encoder_config) {
            Some(p) => Some(existing(p, "encoder config")?),
            None => encoder_weights
                .as_deref()
                .and_then(Path::parent)
                .map(|dir| dir.join("config.json"))
                .filter(|p| p.is_file()),
        };
        let config = Self {
            vocab: existing(vocab, "vocabulary")?,
            merges: existing(merges, "merges file")?,
            encoder_weights,
            encoder_config,
            backend,
            steps: flags.steps.or(file.steps).unwrap_or(DEFAULT_STEPS),
            cfg_scale: flags
                .cfg_scale
                .or(file.cfg_scale)
                .unwrap_or(backend.default_cfg_scale()),
            w: flags.w.or(file.w).unwrap_or(DEFAULT_GUIDANCE),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            out: flags.out.clone().or(file.out).unwrap_or_else(|| "out".into()),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Parameter("--steps must be at least 1".into()));
        }
        if !(self.cfg_scale.is_finite() && self.cfg_scale >= 0.0) {
            return Err(Error::Parameter(format!("--cfg must be finite and >= 0, got {}", self.cfg_scale)));
        }
        if !self.w.is_finite() {
            return Err(Error::Parameter(format!("--w must be finite, got {}", self.w)));
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        match &self.encoder_config {
            Some(path) => EncoderConfig::from_json_file(path),
            None => Ok(EncoderConfig::sd14()),
        }
    }

    /// Short hash of the resolved settings, recorded in every sidecar.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&canonical)[..8])
    }
}
