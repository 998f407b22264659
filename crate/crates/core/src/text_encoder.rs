//! Causal CLIP text transformer (the text tower Stable Diffusion 1.x
//! conditions on).
//!
//! Pre-norm blocks, strictly causal self-attention, final layer norm; no
//! pooling or projection head. All arithmetic is `f32` regardless of the
//! storage dtype of the weights.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::{ArchiveReader, ArchiveWriter};
use crate::error::{Error, Result};
use crate::tensor::{dot, LayerNorm, Linear, Matrix};
use crate::tokenizer::{TokenSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    QuickGelu,
    Gelu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::QuickGelu => x * (1.0 / (1.0 + (-1.702 * x).exp())),
            Activation::Gelu => 0.5 * x * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2)),
        }
    }
}

fn default_eps() -> f32 {
    1e-5
}

/// Encoder hyperparameters. Field aliases accept a Hugging Face
/// `CLIPTextConfig` JSON file as-is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    #[serde(alias = "hidden_size")]
    pub d_model: usize,
    #[serde(alias = "num_hidden_layers")]
    pub n_layers: usize,
    #[serde(alias = "num_attention_heads")]
    pub n_heads: usize,
    #[serde(alias = "max_position_embeddings")]
    pub context_len: usize,
    pub vocab_size: usize,
    /// Hidden width of the MLP; `4 * d_model` when absent.
    #[serde(default)]
    pub intermediate_size: Option<usize>,
    #[serde(alias = "hidden_act", default)]
    pub activation: Activation,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f32,
}

impl EncoderConfig {
    /// CLIP ViT-L/14 text tower as shipped with Stable Diffusion 1.4.
    pub fn sd14() -> Self {
        Self {
            d_model: 768,
            n_layers: 12,
            n_heads: 12,
            context_len: 77,
            vocab_size: 49408,
            intermediate_size: Some(3072),
            activation: Activation::QuickGelu,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("{}: {e}", path.display()),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn mlp_width(&self) -> usize {
        self.intermediate_size.unwrap_or(4 * self.d_model)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("context_len", self.context_len),
            ("vocab_size", self.vocab_size),
            ("intermediate_size", self.mlp_width()),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Parameter(format!("{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Parameter(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.layer_norm_eps.is_finite() && self.layer_norm_eps > 0.0) {
            return Err(Error::Parameter("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    /// Short content hash recorded alongside embedding dumps.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&canonical)[..8])
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub layer_norm1: LayerNorm,
    pub q_proj: Linear,
    pub k_proj: Linear,
    pub v_proj: Linear,
    pub out_proj: Linear,
    pub layer_norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct EncoderWeights {
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub layers: Vec<EncoderLayer>,
    pub final_layer_norm: LayerNorm,
}

const PREFIX: &str = "text_model";

/// Tensor names of the published SD 1.x `text_encoder` checkpoint, with the
/// shape each must have under `config`.
pub fn expected_tensors(config: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.d_model;
    let m = config.mlp_width();
    let mut out = vec![
        (
            format!("{PREFIX}.embeddings.token_embedding.weight"),
            vec![config.vocab_size, d],
        ),
        (
            format!("{PREFIX}.embeddings.position_embedding.weight"),
            vec![config.context_len, d],
        ),
    ];
    for i in 0..config.n_layers {
        let l = format!("{PREFIX}.encoder.layers.{i}");
        for ln in ["layer_norm1", "layer_norm2"] {
            out.push((format!("{l}.{ln}.weight"), vec![d]));
            out.push((format!("{l}.{ln}.bias"), vec![d]));
        }
        for proj in ["q_proj", "k_proj", "v_proj", "out_proj"] {
            out.push((format!("{l}.self_attn.{proj}.weight"), vec![d, d]));
            out.push((format!("{l}.self_attn.{proj}.bias"), vec![d]));
        }
        out.push((format!("{l}.mlp.fc1.weight"), vec![m, d]));
        out.push((format!("{l}.mlp.fc1.bias"), vec![m]));
        out.push((format!("{l}.mlp.fc2.weight"), vec![d, m]));
        out.push((format!("{l}.mlp.fc2.bias"), vec![d]));
    }
    out.push((format!("{PREFIX}.final_layer_norm.weight"), vec![d]));
    out.push((format!("{PREFIX}.final_layer_norm.bias"), vec![d]));
    out
}

struct Loader<'a> {
    archive: ArchiveReader<'a>,
    /// Bare `CLIPTextTransformer` exports drop the `text_model.` prefix.
    bare: bool,
}

impl Loader<'_> {
    fn resolve<'n>(&self, name: &'n str) -> &'n str {
        match name.strip_prefix("text_model.") {
            Some(bare) if self.bare => bare,
            _ => name,
        }
    }

    fn vector(&self, name: &str, len: usize) -> Result<Vec<f32>> {
        let (shape, data) = self.archive.tensor_f32(self.resolve(name))?;
        if shape != [len] {
            return Err(Error::shape(name, &[len], &shape));
        }
        check_finite(name, &data)?;
        Ok(data)
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let (shape, data) = self.archive.tensor_f32(self.resolve(name))?;
        if shape != [rows, cols] {
            return Err(Error::shape(name, &[rows, cols], &shape));
        }
        check_finite(name, &data)?;
        Matrix::from_vec(rows, cols, data)
    }

    fn linear(&self, name: &str, out_f: usize, in_f: usize) -> Result<Linear> {
        Ok(Linear {
            weight: self.matrix(&format!("{name}.weight"), out_f, in_f)?,
            bias: self.vector(&format!("{name}.bias"), out_f)?,
        })
    }

    fn layer_norm(&self, name: &str, d: usize, eps: f32) -> Result<LayerNorm> {
        Ok(LayerNorm {
            weight: self.vector(&format!("{name}.weight"), d)?,
            bias: self.vector(&format!("{name}.bias"), d)?,
            eps,
        })
    }
}

fn check_finite(name: &str, data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Integrity(format!(
            "tensor {name} has a non-finite entry at flat index {i}"
        ))),
        None => Ok(()),
    }
}

impl EncoderWeights {
    /// Loads and shape-checks every tensor named by [`expected_tensors`].
    pub fn load(archive: &[u8], config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let archive = ArchiveReader::parse(archive)?;
        let bare = !archive.contains("text_model.embeddings.token_embedding.weight")
            && archive.contains("embeddings.token_embedding.weight");
        let loader = Loader { archive, bare };
        let missing: Vec<String> = expected_tensors(config)
            .into_iter()
            .map(|(name, _)| name)
            .filter(|name| !loader.archive.contains(loader.resolve(name)))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Load(format!(
                "archive is missing {} tensor(s): {}",
                missing.len(),
                missing.join(", ")
            )));
        }

        let d = config.d_model;
        let m = config.mlp_width();
        let eps = config.layer_norm_eps;
        let layers = (0..config.n_layers)
            .map(|i| {
                let l = format!("{PREFIX}.encoder.layers.{i}");
                Ok(EncoderLayer {
                    layer_norm1: loader.layer_norm(&format!("{l}.layer_norm1"), d, eps)?,
                    q_proj: loader.linear(&format!("{l}.self_attn.q_proj"), d, d)?,
                    k_proj: loader.linear(&format!("{l}.self_attn.k_proj"), d, d)?,
                    v_proj: loader.linear(&format!("{l}.self_attn.v_proj"), d, d)?,
                    out_proj: loader.linear(&format!("{l}.self_attn.out_proj"), d, d)?,
                    layer_norm2: loader.layer_norm(&format!("{l}.layer_norm2"), d, eps)?,
                    fc1: loader.linear(&format!("{l}.mlp.fc1"), m, d)?,
                    fc2: loader.linear(&format!("{l}.mlp.fc2"), d, m)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            token_embedding: loader.matrix(
                &format!("{PREFIX}.embeddings.token_embedding.weight"),
                config.vocab_size,
                d,
            )?,
            position_embedding: loader.matrix(
                &format!("{PREFIX}.embeddings.position_embedding.weight"),
                config.context_len,
                d,
            )?,
            layers,
            final_layer_norm: loader.layer_norm(&format!("{PREFIX}.final_layer_norm"), d, eps)?,
        })
    }
}

/// Final-layer hidden states for one prompt, one row per token position.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    pub(crate) hidden: Matrix,
    pub(crate) tokens: TokenSequence,
    pub(crate) prompt_text: String,
}

impl PromptEmbedding {
    pub fn new(hidden: Matrix, tokens: TokenSequence, prompt_text: impl Into<String>) -> Result<Self> {
        if hidden.rows() != tokens.len() {
            return Err(Error::shape(
                "embedding rows",
                &[tokens.len(), hidden.cols()],
                &hidden.shape(),
            ));
        }
        if !hidden.is_finite() {
            return Err(Error::Integrity("embedding has non-finite entries".into()));
        }
        Ok(Self {
            hidden,
            tokens,
            prompt_text: prompt_text.into(),
        })
    }

    pub fn hidden(&self) -> &Matrix {
        &self.hidden
    }

    pub fn tokens(&self) -> &TokenSequence {
        &self.tokens
    }

    pub fn eos_index(&self) -> usize {
        self.tokens.eos_index()
    }

    pub fn prompt_text(&self) -> &str {
        &self.prompt_text
    }

    pub fn context_len(&self) -> usize {
        self.hidden.rows()
    }

    pub fn d_model(&self) -> usize {
        self.hidden.cols()
    }

    /// Copy of the hidden state at the `<EOS>` position.
    pub fn eos_state(&self) -> Vec<f32> {
        self.hidden.row(self.eos_index()).to_vec()
    }

    /// Writes `hidden` and `token_ids` plus metadata to a tensor archive.
    pub fn to_archive(&self, writer: &mut ArchiveWriter) -> Result<()> {
        let ids: Vec<i64> = self.tokens.ids().iter().map(|&i| i64::from(i)).collect();
        writer.add_f32("hidden", &self.hidden.shape(), self.hidden.as_slice())?;
        writer.add_i64("token_ids", &[ids.len()], &ids)?;
        writer
            .metadata("prompt_text", self.prompt_text.as_str())
            .metadata("eos_index", self.eos_index().to_string())
            .metadata("sos_id", self.tokens.ids()[0].to_string())
            .metadata("eos_id", self.tokens.ids()[self.eos_index()].to_string());
        Ok(())
    }

    pub fn from_archive(bytes: &[u8]) -> Result<Self> {
        let archive = ArchiveReader::parse(bytes)?;
        let meta = archive.metadata();
        let field = |key: &str| -> Result<&String> {
            meta.get(key)
                .ok_or_else(|| Error::Load(format!("embedding archive lacks metadata field {key}")))
        };
        let parse_id = |key: &str| -> Result<u32> {
            field(key)?
                .parse()
                .map_err(|_| Error::Load(format!("metadata field {key} is not an id")))
        };
        let (_, ids) = archive.tensor_i64("token_ids")?;
        let ids = ids
            .into_iter()
            .map(|i| u32::try_from(i).map_err(|_| Error::Integrity(format!("bad token id {i}"))))
            .collect::<Result<Vec<_>>>()?;
        let tokens = TokenSequence::from_ids(ids, parse_id("sos_id")?, parse_id("eos_id")?)?;
        if field("eos_index")? != &tokens.eos_index().to_string() {
            return Err(Error::Integrity("recorded eos_index disagrees with token ids".into()));
        }
        let (shape, data) = archive.tensor_f32("hidden")?;
        if shape.len() != 2 {
            return Err(Error::shape("hidden", &[tokens.len(), 0], &shape));
        }
        let hidden = Matrix::from_vec(shape[0], shape[1], data)?;
        Self::new(hidden, tokens, field("prompt_text")?.clone())
    }
}

/// Loaded encoder ready for inference. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    config: EncoderConfig,
    weights: EncoderWeights,
}

impl TextEncoder {
    pub fn new(config: EncoderConfig, weights: EncoderWeights) -> Self {
        Self { config, weights }
    }

    pub fn load(archive: &[u8], config: EncoderConfig) -> Result<Self> {
        let weights = EncoderWeights::load(archive, &config)?;
        Ok(Self { config, weights })
    }

    pub fn from_file(path: impl AsRef<Path>, config: EncoderConfig) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
        Self::load(&bytes, config)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn weights(&self) -> &EncoderWeights {
        &self.weights
    }

    /// Tokenizes and encodes `text`, recording it as the prompt text.
    pub fn encode_text(&self, vocab: &Vocabulary, text: &str) -> Result<PromptEmbedding> {
        let mut emb = self.encode_tokens(&vocab.encode(text))?;
        emb.prompt_text = text.to_owned();
        Ok(emb)
    }

    pub fn encode_tokens(&self, seq: &TokenSequence) -> Result<PromptEmbedding> {
        let cfg = &self.config;
        if seq.len() != cfg.context_len {
            return Err(Error::shape("token sequence", &[cfg.context_len], &[seq.len()]));
        }
        if let Some(&id) = seq.ids().iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::Input(format!(
                "token id {id} out of range for vocabulary size {}",
                cfg.vocab_size
            )));
        }

        let w = &self.weights;
        let d = cfg.d_model;
        let mut x = Matrix::zeros(seq.len(), d);
        for (pos, &id) in seq.ids().iter().enumerate() {
            let tok = w.token_embedding.row(id as usize);
            let p = w.position_embedding.row(pos);
            for ((o, a), b) in x.row_mut(pos).iter_mut().zip(tok).zip(p) {
                *o = a + b;
            }
        }

        for layer in &w.layers {
            let h = layer.layer_norm1.forward(&x);
            let attn = self.causal_attention(layer, &h);
            add_assign(&mut x, &attn);

            let h = layer.layer_norm2.forward(&x);
            let mut h = layer.fc1.forward(&h);
            for v in h.as_mut_slice() {
                *v = cfg.activation.apply(*v);
            }
            let h = layer.fc2.forward(&h);
            add_assign(&mut x, &h);
        }

        let hidden = w.final_layer_norm.forward(&x);
        PromptEmbedding::new(hidden, seq.clone(), String::new())
    }

    /// Multi-head self-attention where position `i` attends to `0..=i` only.
    fn causal_attention(&self, layer: &EncoderLayer, h: &Matrix) -> Matrix {
        let n_heads = self.config.n_heads;
        let hd = self.config.head_dim();
        let scale = (hd as f32).powf(-0.5);
        let mut q = layer.q_proj.forward(h);
        for v in q.as_mut_slice() {
            *v *= scale;
        }
        let k = layer.k_proj.forward(h);
        let v = layer.v_proj.forward(h);

        let len = h.rows();
        let d = h.cols();
        let mut ctx = Matrix::zeros(len, d);
        ctx.as_mut_slice()
            .par_chunks_mut(d)
            .enumerate()
            .for_each(|(i, out)| {
                let mut scores = vec![0.0f32; i + 1];
                for head in 0..n_heads {
                    let span = head * hd..(head + 1) * hd;
                    let qi = &q.row(i)[span.clone()];
                    for (j, s) in scores.iter_mut().enumerate() {
                        *s = dot(qi, &k.row(j)[span.clone()]);
                    }
                    let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    let mut total = 0.0f32;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    let o = &mut out[span.clone()];
                    for (j, s) in scores.iter().enumerate() {
                        let p = s / total;
                        for (oc, vc) in o.iter_mut().zip(&v.row(j)[span.clone()]) {
                            *oc += p * vc;
                        }
                    }
                }
            });
        layer.out_proj.forward(&ctx)
    }
}

fn add_assign(x: &mut Matrix, y: &Matrix) {
    for (a, b) in x.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *a += b;
    }
}
