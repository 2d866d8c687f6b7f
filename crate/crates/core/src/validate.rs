//! Question-query-question consistency: a candidate question is kept when its
//! embedding is close to that of an independent explanation of the query.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::generate::{CandidateQuestion, Explanation, ExplanationRole};
use crate::llm::{LlmClient, LlmError};

#[derive(Debug, thiserror::Error)]
pub enum ValidateError {
    #[error("vectors have dimensions {0} and {1}")]
    Dimension(usize, usize),
    #[error("cannot take the cosine of a zero vector")]
    ZeroVector,
    #[error("lambda must be in (0, 1], got {0}")]
    Lambda(f64),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("validation needs an explanation with role for_validate")]
    WrongRole,
    #[error(transparent)]
    Llm(#[from] LlmError),
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, ValidateError> {
    if a.len() != b.len() {
        return Err(ValidateError::Dimension(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(ValidateError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub candidate: CandidateQuestion,
    /// Absent when the candidate could not be scored.
    pub similarity: Option<f64>,
    pub accepted: bool,
    /// 1-based position among accepted candidates of the same query.
    pub rank: Option<usize>,
    pub error: Option<String>,
}

/// Scores every candidate against `expl2`, accepts those with similarity at
/// least `lambda`, and keeps the `k` most similar (earlier candidates win
/// ties). Verdicts come back in candidate order, rejected ones included.
/// Credential failures abort; other embedding failures mark the candidate.
pub fn cycle_validate(
    candidates: Vec<CandidateQuestion>,
    expl2: &Explanation,
    client: &LlmClient,
    lambda: f64,
    k: usize,
) -> Result<Vec<ValidationVerdict>, ValidateError> {
    if expl2.role != ExplanationRole::ForValidate {
        return Err(ValidateError::WrongRole);
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(ValidateError::Lambda(lambda));
    }
    if k == 0 {
        return Err(ValidateError::ZeroK);
    }
    let reference = client.embed(&expl2.text)?;
    let scored: Vec<Result<f64, String>> = candidates
        .par_iter()
        .map(|c| match client.embed(&c.question) {
            Ok(e) => Ok(cosine_similarity(&reference.values, &e.values).map_err(|e| e.to_string())),
            Err(e) if e.is_auth() => Err(e),
            Err(e) => Ok(Err(e.to_string())),
        })
        .collect::<Result<_, LlmError>>()?;
    let mut verdicts: Vec<ValidationVerdict> = candidates
        .into_iter()
        .zip(scored)
        .map(|(mut candidate, s)| {
            let (similarity, error) = match s {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e)),
            };
            candidate.similarity = similarity;
            ValidationVerdict {
                candidate,
                similarity,
                accepted: false,
                rank: None,
                error,
            }
        })
        .collect();
    let mut passing: Vec<usize> = (0..verdicts.len())
        .filter(|&i| verdicts[i].similarity.is_some_and(|s| s >= lambda))
        .collect();
    // Stable sort keeps input order among equal similarities.
    passing.sort_by(|&a, &b| {
        verdicts[b]
            .similarity
            .partial_cmp(&verdicts[a].similarity)
            .unwrap()
    });
    for (rank, &i) in passing.iter().take(k).enumerate() {
        verdicts[i].accepted = true;
        verdicts[i].rank = Some(rank + 1);
    }
    Ok(verdicts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::Provenance;
    use crate::llm::stub::StubProvider;
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn cosine_examples() {
        assert!(
            (cosine_similarity(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap() - 8.0 / 9.0).abs()
                < 1e-12
        );
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(ValidateError::Dimension(1, 2))
        ));
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]),
            Err(ValidateError::ZeroVector)
        ));
    }

    fn candidate(q: &str) -> CandidateQuestion {
        CandidateQuestion::new(
            q.into(),
            "SELECT name FROM pets".into(),
            "pets_1".into(),
            Provenance::Reformer,
        )
    }

    fn expl2(text: &str) -> Explanation {
        Explanation {
            text: text.into(),
            role: ExplanationRole::ForValidate,
            query: "SELECT name FROM pets".into(),
        }
    }

    fn client() -> LlmClient {
        LlmClient::new(Arc::new(StubProvider::new()))
    }

    #[test]
    fn identical_text_is_accepted_with_similarity_one() {
        let e = expl2("show the name of the pets table.");
        let v = cycle_validate(
            vec![candidate(&e.text), candidate("zzz qqq")],
            &e,
            &client(),
            0.85,
            5,
        )
        .unwrap();
        assert!((v[0].similarity.unwrap() - 1.0).abs() < 1e-9);
        assert!(v[0].accepted);
        assert_eq!(v[0].rank, Some(1));
        assert!(!v[1].accepted);
        assert_eq!(v[1].candidate.similarity, v[1].similarity);
    }

    #[test]
    fn preconditions() {
        let c = client();
        let mut e = expl2("x");
        assert!(matches!(
            cycle_validate(vec![], &e, &c, 0.0, 5),
            Err(ValidateError::Lambda(_))
        ));
        assert!(matches!(
            cycle_validate(vec![], &e, &c, 1.5, 5),
            Err(ValidateError::Lambda(_))
        ));
        assert!(matches!(
            cycle_validate(vec![], &e, &c, 0.85, 0),
            Err(ValidateError::ZeroK)
        ));
        e.role = ExplanationRole::ForFill;
        assert!(matches!(
            cycle_validate(vec![], &e, &c, 0.85, 5),
            Err(ValidateError::WrongRole)
        ));
    }

    #[test]
    fn empty_candidate_is_marked_not_fatal() {
        let e = expl2("list the pets.");
        let v = cycle_validate(
            vec![candidate(""), candidate("list the pets.")],
            &e,
            &client(),
            0.85,
            5,
        )
        .unwrap();
        assert!(v[0].error.is_some());
        assert!(!v[0].accepted);
        assert!(v[1].accepted);
    }

    const WORDS: &[&str] = &[
        "list", "the", "pets", "names", "show", "weight", "of", "all", "owners",
    ];

    fn sentence() -> impl Strategy<Value = String> {
        proptest::collection::vec(proptest::sample::select(WORDS), 1..6).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn symmetric(a in sentence(), b in sentence()) {
            let c = client();
            let ea = c.embed(&a).unwrap().values;
            let eb = c.embed(&b).unwrap().values;
            prop_assert_eq!(cosine_similarity(&ea, &eb).unwrap(), cosine_similarity(&eb, &ea).unwrap());
        }

        #[test]
        fn verdict_invariants(qs in proptest::collection::vec(sentence(), 0..9), l1 in 0.05f64..1.0, l2 in 0.05f64..1.0, k in 1usize..6) {
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            let e = expl2("list the names of all pets");
            let c = client();
            let cands: Vec<_> = qs.iter().map(|q| candidate(q)).collect();
            let low = cycle_validate(cands.clone(), &e, &c, lo, usize::MAX).unwrap();
            let high = cycle_validate(cands.clone(), &e, &c, hi, usize::MAX).unwrap();
            prop_assert_eq!(low.len(), qs.len());
            for (a, b) in low.iter().zip(&high) {
                prop_assert!(!b.accepted || a.accepted);
            }
            let capped = cycle_validate(cands, &e, &c, lo, k).unwrap();
            let mut ranks: Vec<usize> = capped.iter().filter_map(|v| v.rank).collect();
            ranks.sort_unstable();
            prop_assert!(ranks.len() <= k);
            prop_assert_eq!(ranks, (1..=capped.iter().filter(|v| v.accepted).count()).collect::<Vec<_>>());
            let mut by_rank: Vec<&ValidationVerdict> = capped.iter().filter(|v| v.accepted).collect();
            by_rank.sort_by_key(|v| v.rank);
            for w in by_rank.windows(2) {
                prop_assert!(w[0].similarity >= w[1].similarity);
            }
            for v in &capped {
                prop_assert!(!v.accepted || v.similarity.unwrap() >= lo);
            }
        }
    }
}
