mod common;

use common::{encoder, encoder_fixtures, vocab};
use eos_edit_core::{
    apply_eos_edit, embedding_distance, sweep_guidance, Matrix, PromptEmbedding, TokenSequence,
};
use proptest::prelude::*;

/// Closed form of the edit distance: only the source `<EOS>` row changes.
fn single_row_distance(s: &PromptEmbedding, g: &PromptEmbedding, w: f32) -> f64 {
    let se = s.eos_state();
    let ge = g.eos_state();
    se.iter()
        .zip(&ge)
        .map(|(&a, &b)| {
            let d = f64::from(w) * f64::from(b) - f64::from(a);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Direct full-matrix Frobenius norm, independent of `embedding_distance`.
fn frobenius(a: &Matrix, b: &Matrix) -> f64 {
    let mut total = 0.0f64;
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            let d = f64::from(a.row(r)[c]) - f64::from(b.row(r)[c]);
            total += d * d;
        }
    }
    total.sqrt()
}

fn synthetic(rows: usize, cols: usize, eos: usize, values: &[f32]) -> PromptEmbedding {
    let mut ids = vec![1u32];
    ids.extend((1..eos).map(|k| 10 + k as u32));
    ids.resize(rows, 2);
    PromptEmbedding::new(
        Matrix::from_vec(rows, cols, values.to_vec()).unwrap(),
        TokenSequence::from_ids(ids, 1, 2).unwrap(),
        "synthetic",
    )
    .unwrap()
}

fn embedding_strategy() -> impl Strategy<Value = PromptEmbedding> {
    (1usize..7).prop_flat_map(|eos| {
        proptest::collection::vec(-4.0f32..4.0, 8 * 5)
            .prop_map(move |v| synthetic(8, 5, eos, &v))
    })
}

#[test]
fn eyeglasses_edit_writes_the_fixture_eos_row() {
    let fixtures = encoder_fixtures();
    let target = fixtures.iter().find(|f| f.prompt == "eyeglasses").unwrap();
    let eos = vocab().encode("eyeglasses").eos_index();
    let fixture_row = &target.hidden[eos * 32..(eos + 1) * 32];

    let s = encoder().encode_text(vocab(), "a headshot of a woman").unwrap();
    let g = encoder().encode_text(vocab(), "eyeglasses").unwrap();
    let edited = apply_eos_edit(&s, &g, 1.0).unwrap();
    let row = edited.embedding.hidden().row(s.eos_index());
    assert_eq!(row, g.eos_state().as_slice());
    let err = row.iter().zip(fixture_row).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    assert!(err <= 1e-4, "{err}");
    assert_eq!(edited.source_prompt(), "a headshot of a woman");
    assert_eq!(edited.target_prompt, "eyeglasses");
}

#[test]
fn self_edit_is_identity() {
    let s = encoder().encode_text(vocab(), "a dog").unwrap();
    let out = apply_eos_edit(&s, &s, 1.0).unwrap();
    assert_eq!(out.embedding, s);
    assert_eq!(embedding_distance(&s, &s).unwrap(), 0.0);
}

#[test]
fn sweep_touches_only_the_slot() {
    let s = encoder().encode_text(vocab(), "a dog").unwrap();
    let g = encoder().encode_text(vocab(), "painting").unwrap();
    let ws = [0.0, 0.5, 1.0, 1.5, 2.0];
    let out = sweep_guidance(&s, &g, &ws).unwrap();
    assert_eq!(out.len(), 5);
    for (e, &w) in out.iter().zip(&ws) {
        assert_eq!(e.applied_w, w);
        assert_eq!(*e, apply_eos_edit(&s, &g, w).unwrap());
        for r in (0..77).filter(|&r| r != s.eos_index()) {
            assert_eq!(e.embedding.hidden().row(r), out[0].embedding.hidden().row(r));
        }
        let direct = frobenius(e.embedding.hidden(), s.hidden());
        let closed = single_row_distance(&s, &g, w);
        assert!((direct - closed).abs() <= 1e-6 * closed.max(1e-12), "w={w}");
        let reported = embedding_distance(&s, &e.embedding).unwrap();
        assert!((reported - closed).abs() <= 1e-6 * closed.max(1e-12), "w={w}");
    }
    assert_eq!(sweep_guidance(&s, &g, &[1.0]).unwrap(), vec![apply_eos_edit(&s, &g, 1.0).unwrap()]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn only_the_eos_row_changes(s in embedding_strategy(), g in embedding_strategy(), w in -3.0f32..3.0) {
        let before = (s.clone(), g.clone());
        let out = apply_eos_edit(&s, &g, w).unwrap();
        let slot = s.eos_index();
        for r in 0..8 {
            if r == slot {
                let expect: Vec<f32> = g.eos_state().iter().map(|v| w * v).collect();
                prop_assert_eq!(out.embedding.hidden().row(r), expect.as_slice());
            } else {
                prop_assert_eq!(out.embedding.hidden().row(r), s.hidden().row(r));
            }
        }
        prop_assert_eq!(out.embedding.tokens(), s.tokens());
        prop_assert_eq!((s, g), before);
    }

    #[test]
    fn slot_is_linear_in_w(s in embedding_strategy(), g in embedding_strategy(), w in -3.0f32..3.0) {
        let one = apply_eos_edit(&s, &g, w).unwrap();
        let two = apply_eos_edit(&s, &g, 2.0 * w).unwrap();
        let a = one.embedding.hidden().row(s.eos_index());
        let b = two.embedding.hidden().row(s.eos_index());
        for (x, y) in a.iter().zip(b) {
            prop_assert!((2.0 * x - y).abs() <= f32::EPSILON * y.abs().max(f32::MIN_POSITIVE));
        }
    }

    #[test]
    fn slot_ignores_the_source(s1 in embedding_strategy(), s2 in embedding_strategy(), g in embedding_strategy(), w in -3.0f32..3.0) {
        let a = apply_eos_edit(&s1, &g, w).unwrap();
        let b = apply_eos_edit(&s2, &g, w).unwrap();
        prop_assert_eq!(a.embedding.eos_state(), b.embedding.eos_state());
    }

    #[test]
    fn edit_is_idempotent(s in embedding_strategy(), g in embedding_strategy(), w in -3.0f32..3.0) {
        let once = apply_eos_edit(&s, &g, w).unwrap();
        let twice = apply_eos_edit(&once.embedding, &g, w).unwrap();
        prop_assert_eq!(twice.embedding, once.embedding);
    }

    #[test]
    fn distance_matches_closed_form(s in embedding_strategy(), g in embedding_strategy(), w in -3.0f32..3.0) {
        let out = apply_eos_edit(&s, &g, w).unwrap();
        let d = embedding_distance(&s, &out.embedding).unwrap();
        let closed = single_row_distance(&s, &g, w);
        prop_assert!((d - closed).abs() <= 1e-6 * closed.max(1e-9), "{} vs {}", d, closed);
        prop_assert!((frobenius(s.hidden(), out.embedding.hidden()) - d).abs() <= 1e-9 * d.max(1.0));
    }

    #[test]
    fn distance_triangle_inequality(a in embedding_strategy(), b in embedding_strategy(), c in embedding_strategy()) {
        let ab = embedding_distance(&a, &b).unwrap();
        let bc = embedding_distance(&b, &c).unwrap();
        let ac = embedding_distance(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert_eq!(ab, embedding_distance(&b, &a).unwrap());
    }
}
