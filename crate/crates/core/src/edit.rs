//! `<EOS>` slot editing.
//!
//! The edited conditioning keeps every row of the source embedding except the
//! source's first `<EOS>` position, which is overwritten with `w` times the
//! target prompt's `<EOS>` hidden state. Padding rows after the source
//! `<EOS>` keep their original values, and the target state is copied as-is
//! (no positional correction).

use serde::{Deserialize, Serialize};

use crate::archive::{ArchiveReader, ArchiveWriter};
use crate::error::{Error, Result};
use crate::text_encoder::PromptEmbedding;

pub const DEFAULT_GUIDANCE: f32 = 1.0;

/// Source prompt, target prompt and guidance scale of one edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSpec {
    pub source_prompt: String,
    pub target_prompt: String,
    #[serde(default = "default_w")]
    pub w: f32,
}

fn default_w() -> f32 {
    DEFAULT_GUIDANCE
}

impl EditSpec {
    pub fn new(source_prompt: impl Into<String>, target_prompt: impl Into<String>, w: f32) -> Result<Self> {
        check_w(w)?;
        Ok(Self {
            source_prompt: source_prompt.into(),
            target_prompt: target_prompt.into(),
            w,
        })
    }
}

fn check_w(w: f32) -> Result<()> {
    if w.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("guidance scale must be finite, got {w}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditedEmbedding {
    pub embedding: PromptEmbedding,
    pub source_eos_index: usize,
    pub applied_w: f32,
    /// L2 norm of the unscaled target `<EOS>` state.
    pub target_eos_norm: f32,
    pub target_prompt: String,
}

impl EditedEmbedding {
    pub fn source_prompt(&self) -> &str {
        self.embedding.prompt_text()
    }

    pub fn to_archive(&self, writer: &mut ArchiveWriter) -> Result<()> {
        self.embedding.to_archive(writer)?;
        writer
            .metadata("source_prompt", self.source_prompt())
            .metadata("target_prompt", self.target_prompt.as_str())
            .metadata("w", format!("{:?}", self.applied_w))
            .metadata("source_eos_index", self.source_eos_index.to_string())
            .metadata("target_eos_norm", format!("{:?}", self.target_eos_norm));
        Ok(())
    }

    pub fn from_archive(bytes: &[u8]) -> Result<Self> {
        let embedding = PromptEmbedding::from_archive(bytes)?;
        let archive = ArchiveReader::parse(bytes)?;
        let meta = archive.metadata();
        let get = |key: &str| {
            meta.get(key)
                .ok_or_else(|| Error::Load(format!("edited archive lacks metadata field {key}")))
        };
        let num = |key: &str| -> Result<f32> {
            get(key)?
                .parse()
                .map_err(|_| Error::Load(format!("metadata field {key} is not a number")))
        };
        let source_eos_index: usize = get("source_eos_index")?
            .parse()
            .map_err(|_| Error::Load("source_eos_index is not an integer".into()))?;
        if source_eos_index != embedding.eos_index() {
            return Err(Error::Integrity("source_eos_index disagrees with token ids".into()));
        }
        Ok(Self {
            source_eos_index,
            applied_w: num("w")?,
            target_eos_norm: num("target_eos_norm")?,
            target_prompt: get("target_prompt")?.clone(),
            embedding,
        })
    }
}

fn check_shapes(a: &PromptEmbedding, b: &PromptEmbedding, what: &str) -> Result<()> {
    if a.hidden().shape() != b.hidden().shape() {
        return Err(Error::shape(what, &a.hidden().shape(), &b.hidden().shape()));
    }
    Ok(())
}

/// Replaces the source `<EOS>` row with `w * target_eos`.
pub fn apply_eos_edit(source: &PromptEmbedding, target: &PromptEmbedding, w: f32) -> Result<EditedEmbedding> {
    check_shapes(source, target, "target embedding")?;
    check_w(w)?;
    let slot = source.eos_index();
    let target_eos = target.hidden().row(target.eos_index());
    let target_eos_norm = target_eos
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt() as f32;

    let mut embedding = source.clone();
    for (dst, &g) in embedding.hidden.row_mut(slot).iter_mut().zip(target_eos) {
        *dst = w * g;
    }
    Ok(EditedEmbedding {
        embedding,
        source_eos_index: slot,
        applied_w: w,
        target_eos_norm,
        target_prompt: target.prompt_text().to_owned(),
    })
}

/// One edit per guidance value, in the given order.
pub fn sweep_guidance(
    source: &PromptEmbedding,
    target: &PromptEmbedding,
    w_values: &[f32],
) -> Result<Vec<EditedEmbedding>> {
    if w_values.is_empty() {
        return Err(Error::Parameter("guidance sweep needs at least one value".into()));
    }
    w_values
        .iter()
        .map(|&w| apply_eos_edit(source, target, w))
        .collect()
}

/// `count` evenly spaced values from `w_min` to `w_max` inclusive.
pub fn linspace(w_min: f32, w_max: f32, count: usize) -> Result<Vec<f32>> {
    if count < 2 {
        return Err(Error::Parameter(format!("sweep needs at least 2 points, got {count}")));
    }
    if !(w_min.is_finite() && w_max.is_finite() && w_min < w_max) {
        return Err(Error::Parameter(format!(
            "sweep range must satisfy w_min < w_max, got [{w_min}, {w_max}]"
        )));
    }
    let (lo, hi) = (f64::from(w_min), f64::from(w_max));
    let last = (count - 1) as f64;
    Ok((0..count)
        .map(|i| (lo + (hi - lo) * i as f64 / last) as f32)
        .collect())
}

/// Frobenius norm of the difference of two hidden-state matrices.
pub fn embedding_distance(a: &PromptEmbedding, b: &PromptEmbedding) -> Result<f64> {
    check_shapes(a, b, "embedding")?;
    Ok(a.hidden()
        .as_slice()
        .iter()
        .zip(b.hidden().as_slice())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt())
}
