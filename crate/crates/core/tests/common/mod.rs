#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use eos_edit_core::archive::ArchiveReader;
use eos_edit_core::{EncoderConfig, TextEncoder, Vocabulary};
use serde::Deserialize;

pub fn workspace_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn vocab() -> &'static Vocabulary {
    static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
    VOCAB.get_or_init(|| {
        Vocabulary::from_files(
            workspace_path("assets/clip/vocab.json"),
            workspace_path("assets/clip/merges.txt"),
        )
        .expect("bundled CLIP vocabulary loads")
    })
}

pub fn encoder() -> &'static TextEncoder {
    static ENCODER: OnceLock<TextEncoder> = OnceLock::new();
    ENCODER.get_or_init(|| {
        let config = EncoderConfig::from_json_file(workspace_path("assets/tiny-encoder/config.json"))
            .expect("tiny encoder config");
        TextEncoder::from_file(workspace_path("assets/tiny-encoder/model.safetensors"), config)
            .expect("tiny encoder weights")
    })
}

#[derive(Debug, Deserialize)]
pub struct CorpusRow {
    pub prompt: String,
    pub ids: Vec<u32>,
}

pub fn tokenizer_corpus() -> Vec<CorpusRow> {
    let text = std::fs::read_to_string(fixture_path("tokenizer_corpus.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub struct EncoderFixture {
    pub prompt: String,
    pub ids: Vec<u32>,
    pub hidden: Vec<f32>,
    pub shape: Vec<usize>,
}

pub fn encoder_fixtures() -> Vec<EncoderFixture> {
    let bytes = std::fs::read(fixture_path("encoder_hidden.safetensors")).unwrap();
    let archive = ArchiveReader::parse(&bytes).unwrap();
    let count: usize = archive.metadata()["count"].parse().unwrap();
    (0..count)
        .map(|i| {
            let (shape, hidden) = archive.tensor_f32(&format!("hidden.{i}")).unwrap();
            let (_, ids) = archive.tensor_i64(&format!("ids.{i}")).unwrap();
            EncoderFixture {
                prompt: archive.metadata()[&format!("prompt.{i}")].clone(),
                ids: ids.into_iter().map(|v| v as u32).collect(),
                hidden,
                shape,
            }
        })
        .collect()
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}
