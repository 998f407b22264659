use std::hint::black_box;
use std::path::{Path, PathBuf};

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use eos_edit_core::{
    apply_eos_edit, generate, BackendId, EncoderConfig, GenerationRequest, TextEncoder, ToyBackend,
    Vocabulary,
};

fn asset(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets").join(rel)
}

fn load() -> (Vocabulary, TextEncoder) {
    let vocab = Vocabulary::from_files(asset("clip/vocab.json"), asset("clip/merges.txt")).unwrap();
    let config = EncoderConfig::from_json_file(asset("tiny-encoder/config.json")).unwrap();
    let encoder = TextEncoder::from_file(asset("tiny-encoder/model.safetensors"), config).unwrap();
    (vocab, encoder)
}

const PROMPTS: [&str; 3] = [
    "a dog",
    "a headshot of a woman",
    "a watercolor painting of a lighthouse on a rocky coast at dusk, soft light, muted palette",
];

fn tokenizer(c: &mut Criterion) {
    let (vocab, _) = load();
    let mut group = c.benchmark_group("tokenize");
    for p in PROMPTS {
        group.bench_with_input(BenchmarkId::from_parameter(p.len()), p, |b, p| {
            b.iter(|| vocab.encode(black_box(p)))
        });
    }
    group.finish();
}

fn encoder(c: &mut Criterion) {
    let (vocab, encoder) = load();
    let seq = vocab.encode(PROMPTS[1]);
    c.bench_function("encode_tokens/tiny", |b| b.iter(|| encoder.encode_tokens(black_box(&seq)).unwrap()));
}

fn edit(c: &mut Criterion) {
    let (vocab, encoder) = load();
    let s = encoder.encode_text(&vocab, "a headshot of a woman").unwrap();
    let g = encoder.encode_text(&vocab, "eyeglasses").unwrap();
    c.bench_function("apply_eos_edit/tiny", |b| {
        b.iter(|| apply_eos_edit(black_box(&s), black_box(&g), 1.0).unwrap())
    });
}

fn toy_generate(c: &mut Criterion) {
    let (vocab, encoder) = load();
    let s = encoder.encode_text(&vocab, "a headshot of a woman").unwrap();
    let uncond = encoder.encode_text(&vocab, "").unwrap();
    let toy = ToyBackend::new(encoder.config().d_model).unwrap();
    let mut group = c.benchmark_group("toy_generate");
    group.sample_size(20);
    for steps in [10, 50] {
        let mut req = GenerationRequest::new(s.clone(), uncond.clone(), 7, BackendId::Toy);
        req.steps = steps;
        group.bench_with_input(BenchmarkId::from_parameter(steps), &req, |b, req| {
            b.iter(|| generate(&toy, req).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, tokenizer, encoder, edit, toy_generate);
criterion_main!(benches);
