mod common;

use common::{encoder, encoder_fixtures, max_abs_diff, vocab};
use eos_edit_core::TokenSequence;
use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[test]
fn matches_reference_hidden_states() {
    let fixtures = encoder_fixtures();
    assert!(fixtures.len() >= 10);
    for required in ["a headshot of a woman", "a headshot of a man", "a nurse", "a dog"] {
        assert!(fixtures.iter().any(|f| f.prompt == required));
    }
    for f in &fixtures {
        let seq = vocab().encode(&f.prompt);
        assert_eq!(seq.ids(), f.ids.as_slice(), "tokenization of {:?}", f.prompt);
        let emb = encoder().encode_text(vocab(), &f.prompt).unwrap();
        assert_eq!(emb.hidden().shape().to_vec(), f.shape);
        let err = max_abs_diff(emb.hidden().as_slice(), &f.hidden);
        assert!(err <= 1e-4, "{:?}: max abs error {err}", f.prompt);
    }
}

#[test]
fn empty_prompt_is_finite_and_eos_is_row_one() {
    let emb = encoder().encode_text(vocab(), "").unwrap();
    assert_eq!(emb.hidden().shape(), [77, 32]);
    assert!(emb.hidden().is_finite());
    assert_eq!(emb.eos_index(), 1);
    assert_eq!(emb.eos_state(), emb.hidden().row(1));
}

#[test]
fn eos_state_is_the_eos_row() {
    let emb = encoder().encode_text(vocab(), "a dog").unwrap();
    assert_eq!(emb.eos_state(), emb.hidden().row(emb.eos_index()));
    let g = encoder().encode_text(vocab(), "a person with an eyeglass").unwrap();
    let norm: f32 = g.eos_state().iter().map(|v| v * v).sum::<f32>().sqrt();
    assert!(norm > 0.0);
}

/// Two sequences sharing a prefix of length `shared + 1`.
fn random_pair(rng: &mut ChaCha8Rng) -> (TokenSequence, TokenSequence, usize) {
    let v = vocab();
    let body = |rng: &mut ChaCha8Rng, n: usize| -> Vec<u32> {
        (0..n).map(|_| rng.next_u32() % 49406).collect()
    };
    let len_a = 1 + (rng.next_u32() % 60) as usize;
    let a = body(rng, len_a);
    let shared = (rng.next_u32() as usize) % len_a;
    let mut b = a[..shared].to_vec();
    let len_b = 1 + (rng.next_u32() % 60) as usize;
    b.extend(body(rng, len_b));
    if b.len() > shared && a.len() > shared && b[shared] == a[shared] {
        b[shared] = (b[shared] + 1) % 49406;
    }
    b.truncate(75);
    let layout = |content: Vec<u32>| {
        let mut ids = vec![v.sos_id()];
        ids.extend(content);
        ids.resize(77, v.eos_id());
        TokenSequence::from_ids(ids, v.sos_id(), v.eos_id()).unwrap()
    };
    (layout(a), layout(b), shared)
}

#[test]
fn causal_prefix_rows_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..20 {
        let (a, b, shared) = random_pair(&mut rng);
        let agree = (0..77).take_while(|&k| a.ids()[k] == b.ids()[k]).count();
        assert!(agree > shared);
        let ea = encoder().encode_tokens(&a).unwrap();
        let eb = encoder().encode_tokens(&b).unwrap();
        for k in 0..agree {
            assert_eq!(ea.hidden().row(k), eb.hidden().row(k), "row {k}");
        }
        if agree < 77 {
            assert_ne!(ea.hidden().row(agree), eb.hidden().row(agree));
        }
    }
}

#[test]
fn output_is_independent_of_thread_count() {
    let seq = vocab().encode("a headshot of a woman with eyeglasses");
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| encoder().encode_tokens(&seq).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(1));
}

#[test]
fn concurrent_encodes_do_not_interact() {
    let prompts = ["a dog", "a nurse", "sea", "painting"];
    let serial: Vec<_> = prompts
        .iter()
        .map(|p| encoder().encode_text(vocab(), p).unwrap())
        .collect();
    let parallel: Vec<_> = std::thread::scope(|s| {
        let hs: Vec<_> = prompts
            .iter()
            .map(|p| s.spawn(move || encoder().encode_text(vocab(), p).unwrap()))
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, parallel);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_sequences_give_finite_full_shape(content in proptest::collection::vec(0u32..49406, 0..75)) {
        let v = vocab();
        let mut ids = vec![v.sos_id()];
        ids.extend(content);
        ids.resize(77, v.eos_id());
        let seq = TokenSequence::from_ids(ids, v.sos_id(), v.eos_id()).unwrap();
        let emb = encoder().encode_tokens(&seq).unwrap();
        prop_assert_eq!(emb.hidden().shape(), [77, 32]);
        prop_assert!(emb.hidden().is_finite());
    }
}
