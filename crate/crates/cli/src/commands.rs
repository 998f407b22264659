//! One function per verb. Each writes its artifacts through a [`Staging`]
//! area and returns what it produced so callers can print or inspect it.
//!
//! [`Staging`]: crate::output::Staging

use std::path::PathBuf;

use eos_edit_core::archive::ArchiveWriter;
use eos_edit_core::{
    apply_eos_edit, embedding_distance, linspace, sweep_guidance, EditedEmbedding, Error,
    ImageResult, PromptEmbedding, Provenance, Result, RgbImage,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::output::PromptRecord;
use crate::pipeline::Pipeline;

pub const COMPARE_REPORT: &str = "compare_report.csv";
pub const BASELINE_REPORT: &str = "baseline_report.csv";
pub const SWEEP_REPORT: &str = "sweep_report.csv";
pub const SWEEP_GRID: &str = "sweep_grid.png";

#[derive(Debug, Clone, Serialize)]
pub struct TokenizeOutcome {
    #[serde(flatten)]
    pub prompt: PromptRecord,
    pub pieces: Vec<String>,
}

pub fn cmd_tokenize(p: &Pipeline, prompt: &str) -> Result<TokenizeOutcome> {
    let record = p.prompt_record("prompt", prompt);
    let pieces = record
        .token_ids
        .iter()
        .map(|&id| {
            p.vocab
                .id_to_token(id)
                .map(str::to_owned)
                .ok_or(Error::Lookup { id, vocab_size: p.vocab.vocab_size() })
        })
        .collect::<Result<_>>()?;
    Ok(TokenizeOutcome { prompt: record, pieces })
}

#[derive(Debug)]
pub struct EncodeOutcome {
    pub embedding: PromptEmbedding,
    pub files: Vec<PathBuf>,
}

pub fn cmd_encode(p: &Pipeline, prompt: &str) -> Result<EncodeOutcome> {
    let embedding = p.encode(prompt)?;
    let mut writer = ArchiveWriter::new();
    embedding.to_archive(&mut writer)?;
    let mut staging = p.staging()?;
    p.emit(
        &mut staging,
        "embedding.safetensors",
        &writer.to_bytes(),
        &[p.prompt_record("prompt", prompt)],
        &[],
        json!({ "eos_index": embedding.eos_index() }),
    )?;
    Ok(EncodeOutcome { embedding, files: staging.commit()? })
}

#[derive(Debug)]
pub struct EditOutcome {
    pub edited: EditedEmbedding,
    pub embedding_distance: f64,
    pub files: Vec<PathBuf>,
}

pub fn cmd_edit(p: &Pipeline, source: &str, target: &str) -> Result<EditOutcome> {
    let s = p.encode(source)?;
    let g = p.encode(target)?;
    let edited = apply_eos_edit(&s, &g, p.config.w)?;
    let distance = embedding_distance(&s, &edited.embedding)?;
    let mut writer = ArchiveWriter::new();
    edited.to_archive(&mut writer)?;
    let mut staging = p.staging()?;
    p.emit(
        &mut staging,
        "edited.safetensors",
        &writer.to_bytes(),
        &[p.prompt_record("source", source), p.prompt_record("target", target)],
        &[],
        json!({
            "w": edited.applied_w,
            "source_eos_index": edited.source_eos_index,
            "target_eos_norm": edited.target_eos_norm,
            "embedding_distance": distance,
        }),
    )?;
    Ok(EditOutcome { edited, embedding_distance: distance, files: staging.commit()? })
}

/// What `generate` conditions on.
#[derive(Debug, Clone)]
pub enum GenerateInput {
    Prompt(String),
    /// An archive written by `encode` or `edit`.
    Embedding(PathBuf),
}

#[derive(Debug)]
pub struct GenerateOutcome {
    pub result: ImageResult,
    pub files: Vec<PathBuf>,
}

pub fn cmd_generate(p: &Pipeline, input: &GenerateInput) -> Result<GenerateOutcome> {
    let uncond = p.encode("")?;
    let (result, prompts, details) = match input {
        GenerateInput::Prompt(prompt) => (
            p.generate(p.encode(prompt)?, &uncond)?,
            vec![p.prompt_record("prompt", prompt)],
            json!({}),
        ),
        GenerateInput::Embedding(path) => {
            let bytes = std::fs::read(path)
                .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
            let result = match EditedEmbedding::from_archive(&bytes) {
                Ok(edited) => p.generate(edited, &uncond)?,
                Err(_) => p.generate(PromptEmbedding::from_archive(&bytes)?, &uncond)?,
            };
            let mut prompts = vec![p.prompt_record("prompt", &result.provenance.prompt)];
            if let Some(target) = &result.provenance.target_prompt {
                prompts.push(p.prompt_record("target", target));
            }
            (result, prompts, json!({ "embedding": path }))
        }
    };
    let mut staging = p.staging()?;
    p.emit(
        &mut staging,
        "image.png",
        &result.image.to_png()?,
        &prompts,
        std::slice::from_ref(&result.provenance),
        with_digest(details, &result),
    )?;
    Ok(GenerateOutcome { result, files: staging.commit()? })
}

fn with_digest(mut details: serde_json::Value, result: &ImageResult) -> serde_json::Value {
    details["latent_digest"] = json!(result.latent_digest);
    details
}

/// One row of `compare_report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub role: String,
    pub prompt: String,
    pub normalized_prompt: String,
    pub target_prompt: Option<String>,
    pub w: Option<f32>,
    pub seed: u64,
    pub steps: usize,
    pub cfg_scale: f32,
    pub backend: String,
    pub embedding_distance: f64,
    pub latent_digest: String,
    pub image: String,
}

#[derive(Debug)]
pub struct CompareOutcome {
    pub source: ImageResult,
    pub edited: ImageResult,
    pub baseline: Option<ImageResult>,
    pub rows: Vec<CompareRow>,
    pub files: Vec<PathBuf>,
}

/// Paired generation from one seed: the unedited source prompt and its
/// `<EOS>`-edited version. With `concat_baseline`, also generates the
/// prompt-concatenation baseline `"{source}, {target}"`.
pub fn cmd_compare(p: &Pipeline, source: &str, target: &str, concat_baseline: bool) -> Result<CompareOutcome> {
    compare(p, source, target, concat_baseline, "compare")
}

/// Moderation recipe: replace the `<EOS>` state of an unsafe prompt with that
/// of a replacement prompt. Same outputs as [`cmd_compare`].
pub fn cmd_moderate(p: &Pipeline, unsafe_prompt: &str, replacement: &str) -> Result<CompareOutcome> {
    compare(p, unsafe_prompt, replacement, false, "moderate")
}

fn compare(p: &Pipeline, source: &str, target: &str, concat_baseline: bool, recipe: &str) -> Result<CompareOutcome> {
    let uncond = p.encode("")?;
    let s = p.encode(source)?;
    let g = p.encode(target)?;
    let edited = apply_eos_edit(&s, &g, p.config.w)?;
    let distance = embedding_distance(&s, &edited.embedding)?;
    let baseline_prompt = concat_prompt(source, [target]);

    let ((a, b), c) = rayon::join(
        || rayon::join(|| p.generate(s.clone(), &uncond), || p.generate(edited.clone(), &uncond)),
        || {
            concat_baseline
                .then(|| p.encode(&baseline_prompt).and_then(|e| p.generate(e, &uncond)))
                .transpose()
        },
    );
    let (a, b, c) = (a?, b?, c?);

    let mut prompts = vec![p.prompt_record("source", source), p.prompt_record("target", target)];
    let mut rows = vec![
        compare_row(p, "source", &a, 0.0, "source.png"),
        compare_row(p, "edited", &b, distance, "edited.png"),
    ];
    let mut images = vec![("source.png", &a), ("edited.png", &b)];
    if let Some(c) = &c {
        let e = p.encode(&baseline_prompt)?;
        rows.push(compare_row(p, "baseline", c, embedding_distance(&s, &e)?, "baseline.png"));
        images.push(("baseline.png", c));
        prompts.push(p.prompt_record("baseline", &baseline_prompt));
    }

    let mut staging = p.staging()?;
    for (name, result) in &images {
        p.emit(
            &mut staging,
            name,
            &result.image.to_png()?,
            &prompts,
            std::slice::from_ref(&result.provenance),
            with_digest(json!({ "recipe": recipe }), result),
        )?;
    }
    staging.write_csv(COMPARE_REPORT, &rows)?;
    let generations: Vec<Provenance> = images.iter().map(|(_, r)| r.provenance.clone()).collect();
    p.emit_sidecar(
        &mut staging,
        COMPARE_REPORT,
        &prompts,
        &generations,
        json!({ "recipe": recipe, "embedding_distance": distance }),
    )?;
    Ok(CompareOutcome { source: a, edited: b, baseline: c, rows, files: staging.commit()? })
}

fn compare_row(p: &Pipeline, role: &str, r: &ImageResult, distance: f64, image: &str) -> CompareRow {
    let prov = &r.provenance;
    CompareRow {
        role: role.to_owned(),
        prompt: prov.prompt.clone(),
        normalized_prompt: p.vocab.normalize(&prov.prompt),
        target_prompt: prov.target_prompt.clone(),
        w: prov.w,
        seed: prov.seed,
        steps: prov.steps,
        cfg_scale: prov.cfg_scale,
        backend: prov.backend.to_string(),
        embedding_distance: distance,
        latent_digest: r.latent_digest.clone(),
        image: image.to_owned(),
    }
}

/// `"a nurse"` + `["man", "glasses"]` gives `"a nurse, man, glasses"`.
pub fn concat_prompt<'a>(source: &str, attributes: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = source.to_owned();
    for a in attributes {
        out.push_str(", ");
        out.push_str(a);
    }
    out
}

/// One row of `baseline_report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub role: String,
    pub prompt: String,
    pub normalized_prompt: String,
    /// Space-separated ids from `<SOS>` through the first `<EOS>`.
    pub token_ids: String,
    pub eos_index: usize,
    pub seed: u64,
    pub latent_digest: Option<String>,
    pub image: Option<String>,
}

#[derive(Debug)]
pub struct BaselineOutcome {
    pub prompt: String,
    pub result: ImageResult,
    pub rows: Vec<BaselineRow>,
    pub files: Vec<PathBuf>,
}

pub fn cmd_baseline_concat(p: &Pipeline, source: &str, attributes: &[String]) -> Result<BaselineOutcome> {
    let prompt = concat_prompt(source, attributes.iter().map(String::as_str));
    let uncond = p.encode("")?;
    let result = p.generate(p.encode(&prompt)?, &uncond)?;
    let prompts = [p.prompt_record("source", source), p.prompt_record("baseline", &prompt)];
    let rows = prompts
        .iter()
        .map(|r| {
            let is_baseline = r.role == "baseline";
            BaselineRow {
                role: r.role.clone(),
                prompt: r.text.clone(),
                normalized_prompt: r.normalized.clone(),
                token_ids: r.token_ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" "),
                eos_index: r.eos_index,
                seed: p.config.seed,
                latent_digest: is_baseline.then(|| result.latent_digest.clone()),
                image: is_baseline.then(|| "baseline.png".to_owned()),
            }
        })
        .collect::<Vec<_>>();

    let mut staging = p.staging()?;
    let details = json!({ "attributes": attributes });
    p.emit(
        &mut staging,
        "baseline.png",
        &result.image.to_png()?,
        &prompts,
        std::slice::from_ref(&result.provenance),
        with_digest(details.clone(), &result),
    )?;
    staging.write_csv(BASELINE_REPORT, &rows)?;
    p.emit_sidecar(&mut staging, BASELINE_REPORT, &prompts, std::slice::from_ref(&result.provenance), details)?;
    Ok(BaselineOutcome { prompt, result, rows, files: staging.commit()? })
}

/// One row of `sweep_report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub w: f32,
    pub embedding_distance: f64,
    pub latent_digest: String,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub results: Vec<ImageResult>,
    pub files: Vec<PathBuf>,
}

/// `count` evenly spaced guidance values in `[w_min, w_max]`, one generation
/// each from the same seed, laid out left to right in a grid.
pub fn cmd_sweep(p: &Pipeline, source: &str, target: &str, w_min: f32, w_max: f32, count: usize) -> Result<SweepOutcome> {
    let ws = linspace(w_min, w_max, count)?;
    let uncond = p.encode("")?;
    let s = p.encode(source)?;
    let g = p.encode(target)?;
    let edits = sweep_guidance(&s, &g, &ws)?;
    // par_iter + collect keeps input order
    let results = edits
        .par_iter()
        .map(|e| p.generate(e.clone(), &uncond))
        .collect::<Result<Vec<_>>>()?;
    let rows = edits
        .iter()
        .zip(&results)
        .map(|(e, r)| {
            Ok(SweepRow {
                w: e.applied_w,
                embedding_distance: embedding_distance(&s, &e.embedding)?,
                latent_digest: r.latent_digest.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let images: Vec<RgbImage> = results.iter().map(|r| r.image.clone()).collect();
    let grid = RgbImage::grid(&images, images.len())?;
    let prompts = [p.prompt_record("source", source), p.prompt_record("target", target)];
    let generations: Vec<Provenance> = results.iter().map(|r| r.provenance.clone()).collect();
    let details = json!({ "w_min": w_min, "w_max": w_max, "count": count, "w": ws });

    let mut staging = p.staging()?;
    p.emit(&mut staging, SWEEP_GRID, &grid.to_png()?, &prompts, &generations, details.clone())?;
    staging.write_csv(SWEEP_REPORT, &rows)?;
    p.emit_sidecar(&mut staging, SWEEP_REPORT, &prompts, &generations, details)?;
    Ok(SweepOutcome { rows, results, files: staging.commit()? })
}
