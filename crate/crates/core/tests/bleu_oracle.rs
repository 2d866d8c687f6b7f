//! BLEU against a naive loop-and-product oracle.

mod common;

use common::oracles::naive_bleu;
use proptest::prelude::*;
use qsynth_core::metrics::{bleu, self_bleu, Smoothing};

const TOL: f64 = 1e-6;

#[test]
fn oracle_hand_values() {
    // p = 5/6, 3/5, 1/4, and 1/4 after smoothing the empty 4-gram order.
    let want = 100.0 * (5.0 / 6.0 * 3.0 / 5.0 * 1.0 / 4.0 * 1.0 / 4.0f64).powf(0.25);
    assert!(
        (naive_bleu("the cat sat on the mat", &["the cat is on the mat"], true) - want).abs()
            < 1e-12
    );
    assert_eq!(
        naive_bleu("the cat sat on the mat", &["the cat is on the mat"], false),
        0.0
    );
    assert!((naive_bleu("a b c d", &["a b c d"], false) - 100.0).abs() < 1e-12);
}

#[test]
fn fixed_cases_match_oracle() {
    let cases: [(&str, &[&str]); 5] = [
        ("the cat sat on the mat", &["the cat is on the mat"]),
        (
            "how many singers are there",
            &["how many singers do we have", "count the singers"],
        ),
        ("the the the the the", &["the cat is on the mat"]),
        (
            "list names",
            &["list the names of all singers", "list names of singers"],
        ),
        (
            "what is the name of the oldest dog",
            &["what is the name of the oldest dog"],
        ),
    ];
    for (cand, refs) in cases {
        let got = bleu(cand, refs, Smoothing::AddOneOnZero).unwrap();
        let want = naive_bleu(cand, refs, true);
        assert!((got - want).abs() < TOL, "{cand:?}: {got} vs {want}");
        let got = bleu(cand, refs, Smoothing::None).unwrap();
        let want = naive_bleu(cand, refs, false);
        assert!(
            (got - want).abs() < TOL,
            "{cand:?} unsmoothed: {got} vs {want}"
        );
    }
}

#[test]
fn identical_triplet_self_bleu() {
    let s = ["show the name of each singer"; 3];
    assert!((self_bleu(&s, Smoothing::default()).unwrap() - 100.0).abs() < TOL);
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop::sample::select(vec!["a", "b", "c", "d", "the", "of"]),
        1..12,
    )
    .prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn random_sentences_match_oracle(cand in sentence(), refs in prop::collection::vec(sentence(), 1..4)) {
        let refs: Vec<&str> = refs.iter().map(String::as_str).collect();
        let got = bleu(&cand, &refs, Smoothing::AddOneOnZero).unwrap();
        let want = naive_bleu(&cand, &refs, true);
        prop_assert!((got - want).abs() < TOL, "{} vs {}", got, want);
        let got = bleu(&cand, &refs, Smoothing::None).unwrap();
        let want = naive_bleu(&cand, &refs, false);
        prop_assert!((got - want).abs() < TOL, "unsmoothed {} vs {}", got, want);
    }
}
