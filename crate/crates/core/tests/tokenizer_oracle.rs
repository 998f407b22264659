mod common;

use common::{tokenizer_corpus, vocab};
use eos_edit_core::{eos_index_of, TokenSequence};
use proptest::prelude::*;

const REQUIRED_PROMPTS: [&str; 6] = [
    "a headshot of a woman",
    "a headshot of a man",
    "a nurse, man, glasses",
    "a dog",
    "painting",
    "a person with an eyeglass",
];

#[test]
fn sd14_vocabulary_constants() {
    let v = vocab();
    assert_eq!(v.vocab_size(), 49408);
    assert_eq!(v.sos_id(), 49406);
    assert_eq!(v.eos_id(), 49407);
    assert_eq!(v.context_len(), 77);
    assert_eq!(v.merges().len(), 48894);
}

#[test]
fn corpus_matches_reference_ids() {
    let corpus = tokenizer_corpus();
    assert!(corpus.len() >= 200);
    for p in REQUIRED_PROMPTS {
        assert!(corpus.iter().any(|r| r.prompt == p), "corpus lacks {p:?}");
    }
    let mismatches: Vec<&str> = corpus
        .iter()
        .filter(|row| vocab().encode(&row.prompt).ids() != row.ids.as_slice())
        .map(|row| row.prompt.as_str())
        .collect();
    assert!(mismatches.is_empty(), "mismatched prompts: {mismatches:?}");
}

#[test]
fn a_dog() {
    let seq = vocab().encode("a dog");
    assert_eq!(&seq.ids()[..4], &[49406, 320, 1929, 49407]);
    assert_eq!(seq.eos_index(), 3);
    assert_eq!(seq.content_len(), 2);
    assert_eq!(eos_index_of(seq.ids(), vocab().eos_id()).unwrap(), 3);
}

#[test]
fn empty_prompt_layout() {
    let seq = vocab().encode("");
    assert_eq!(seq.ids()[0], 49406);
    assert!(seq.ids()[1..].iter().all(|&id| id == 49407));
    assert_eq!((seq.eos_index(), seq.content_len()), (1, 0));
    assert_eq!(vocab().decode(&seq).unwrap(), "");
}

#[test]
fn long_prompt_is_truncated() {
    let text = vec!["painting"; 200].join(" ");
    let seq = vocab().encode(&text);
    assert_eq!(seq.len(), 77);
    assert_eq!(seq.content_len(), 75);
    assert_eq!(seq.eos_index(), 76);
    assert_eq!(seq.ids()[76], 49407);
}

#[test]
fn decode_normalizes() {
    assert_eq!(vocab().decode(&vocab().encode("A   Dog")).unwrap(), "a dog");
    assert_eq!(vocab().decode(&vocab().encode("  Hello\tWorld!!! ")).unwrap(), "hello world !!!");
}

#[test]
fn decode_encode_is_idempotent_on_corpus() {
    let corpus = tokenizer_corpus();
    for row in corpus.iter().take(100) {
        let once = vocab().decode(&vocab().encode(&row.prompt)).unwrap();
        let twice = vocab().decode(&vocab().encode(&once)).unwrap();
        assert_eq!(once, twice, "prompt {:?}", row.prompt);
    }
}

#[test]
fn nfc_composition() {
    assert_eq!(vocab().encode("cafe\u{301}"), vocab().encode("café"));
}

#[test]
fn encode_is_thread_independent() {
    let corpus = tokenizer_corpus();
    let serial: Vec<TokenSequence> = corpus.iter().map(|r| vocab().encode(&r.prompt)).collect();
    let handles: Vec<_> = (0..4)
        .map(|_| {
            std::thread::spawn(|| {
                tokenizer_corpus()
                    .iter()
                    .map(|r| vocab().encode(&r.prompt))
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), serial);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn every_encoding_satisfies_the_layout(text in "\\PC{0,120}") {
        let v = vocab();
        let seq = v.encode(&text);
        prop_assert_eq!(seq.len(), 77);
        let checked = TokenSequence::from_ids(seq.ids().to_vec(), v.sos_id(), v.eos_id());
        prop_assert!(checked.is_ok(), "{:?}", checked);
        prop_assert_eq!(checked.unwrap(), seq.clone());
        prop_assert!((1..=76).contains(&seq.eos_index()));
        prop_assert_eq!(seq.content_len(), seq.eos_index() - 1);
    }

    #[test]
    fn appending_words_never_moves_eos_left(
        base in proptest::collection::vec("[a-z]{1,9}", 0..40),
        extra in proptest::collection::vec("[a-z!,.]{1,9}", 1..40),
    ) {
        let short = base.join(" ");
        let long = format!("{short} {}", extra.join(" "));
        prop_assert!(vocab().encode(&short).eos_index() <= vocab().encode(&long).eos_index());
    }
}
