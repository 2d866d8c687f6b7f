//! Sentence BLEU and self-BLEU for scoring quality and diversity of
//! generated question sets.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::templating::tokenize_lower;

const MAX_N: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Any zero precision gives a zero score.
    None,
    /// (m + 1) / (l + 1) for every order above one.
    AddOne,
    /// 1 / (l + 1) for orders above one that have no match.
    #[default]
    AddOneOnZero,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty candidate")]
    EmptyCandidate,
    #[error("no non-empty reference")]
    NoReference,
    #[error("self-BLEU needs at least two sentences")]
    TooFewSentences,
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Sentence-level BLEU-4 on a 0-100 scale with clipped n-gram counts and a
/// brevity penalty against the closest reference length.
pub fn bleu(
    candidate: &str,
    references: &[&str],
    smoothing: Smoothing,
) -> Result<f64, MetricsError> {
    let cand = tokenize_lower(candidate);
    if cand.is_empty() {
        return Err(MetricsError::EmptyCandidate);
    }
    let refs: Vec<Vec<String>> = references
        .iter()
        .map(|r| tokenize_lower(r))
        .filter(|r| !r.is_empty())
        .collect();
    if refs.is_empty() {
        return Err(MetricsError::NoReference);
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_N {
        let counts = ngrams(&cand, n);
        let total: usize = counts.values().sum();
        let ref_counts: Vec<_> = refs.iter().map(|r| ngrams(r, n)).collect();
        let matched: usize = counts
            .iter()
            .map(|(g, &c)| {
                c.min(
                    ref_counts
                        .iter()
                        .map(|r| r.get(g).copied().unwrap_or(0))
                        .max()
                        .unwrap_or(0),
                )
            })
            .sum();
        let raw = if total == 0 {
            0.0
        } else {
            matched as f64 / total as f64
        };
        let p = match smoothing {
            _ if n == 1 => raw,
            Smoothing::None => raw,
            Smoothing::AddOne => (matched + 1) as f64 / (total + 1) as f64,
            Smoothing::AddOneOnZero if matched == 0 => 1.0 / (total + 1) as f64,
            Smoothing::AddOneOnZero => raw,
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln();
    }
    let c = cand.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty");
    let bp = if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    Ok((100.0 * bp * (log_sum / MAX_N as f64).exp()).clamp(0.0, 100.0))
}

/// Mean BLEU of each sentence against all the others.
pub fn self_bleu(sentences: &[&str], smoothing: Smoothing) -> Result<f64, MetricsError> {
    if sentences.len() < 2 {
        return Err(MetricsError::TooFewSentences);
    }
    let mut sum = 0.0;
    for i in 0..sentences.len() {
        let others: Vec<&str> = sentences
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, s)| *s)
            .collect();
        sum += bleu(sentences[i], &others, smoothing)?;
    }
    Ok(sum / sentences.len() as f64)
}

/// Gold and generated questions for one source query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionSet {
    pub db_id: String,
    pub query: String,
    pub gold: Vec<String>,
    pub generated: Vec<String>,
}

/// Groups gold and generated (db_id, query, question) triples by query.
/// Sets are ordered by (db_id, query).
pub fn group_sets<'a>(
    gold: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    generated: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
) -> Vec<QuestionSet> {
    let mut sets: BTreeMap<(&str, &str), QuestionSet> = BTreeMap::new();
    let tagged = gold
        .into_iter()
        .map(|t| (t, true))
        .chain(generated.into_iter().map(|t| (t, false)));
    for ((db, query, text), is_gold) in tagged {
        let set = sets.entry((db, query)).or_insert_with(|| QuestionSet {
            db_id: db.into(),
            query: query.into(),
            ..Default::default()
        });
        if is_gold {
            &mut set.gold
        } else {
            &mut set.generated
        }
        .push(text.to_string());
    }
    sets.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetScore {
    pub db_id: String,
    pub query: String,
    pub generated: usize,
    /// Highest BLEU of a generated question against the gold questions.
    pub best_bleu: Option<f64>,
    pub self_bleu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub smoothing: Smoothing,
    pub sets: Vec<SetScore>,
    pub mean_best_bleu: Option<f64>,
    pub mean_self_bleu: Option<f64>,
    /// 100 minus mean self-BLEU.
    pub diversity: Option<f64>,
    /// Self-BLEU among gold questions of queries that have several.
    pub gold_self_bleu: Option<f64>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn non_empty(v: &[String]) -> Vec<&str> {
    v.iter()
        .map(String::as_str)
        .filter(|s| !s.trim().is_empty())
        .collect()
}

pub fn quality_report(sets: &[QuestionSet], smoothing: Smoothing) -> QualityReport {
    let scores: Vec<SetScore> = sets
        .iter()
        .map(|s| {
            let gold = non_empty(&s.gold);
            let generated = non_empty(&s.generated);
            let best_bleu = generated
                .iter()
                .filter_map(|g| bleu(g, &gold, smoothing).ok())
                .max_by(f64::total_cmp);
            SetScore {
                db_id: s.db_id.clone(),
                query: s.query.clone(),
                generated: generated.len(),
                best_bleu,
                self_bleu: self_bleu(&generated, smoothing).ok(),
            }
        })
        .collect();
    let mean_self_bleu = mean(scores.iter().filter_map(|s| s.self_bleu));
    QualityReport {
        smoothing,
        mean_best_bleu: mean(scores.iter().filter_map(|s| s.best_bleu)),
        mean_self_bleu,
        diversity: mean_self_bleu.map(|s| 100.0 - s),
        gold_self_bleu: mean(
            sets.iter()
                .filter_map(|s| self_bleu(&non_empty(&s.gold), smoothing).ok()),
        ),
        sets: scores,
    }
}

impl QualityReport {
    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:>5} {:>9} {:>9}  query",
            "db_id", "n", "best_bleu", "self_bleu"
        );
        for s in &self.sets {
            let _ = writeln!(
                out,
                "{:<20} {:>5} {:>9} {:>9}  {}",
                s.db_id,
                s.generated,
                fmt(s.best_bleu),
                fmt(s.self_bleu),
                s.query
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "mean best BLEU   {}", fmt(self.mean_best_bleu));
        let _ = writeln!(out, "mean self-BLEU   {}", fmt(self.mean_self_bleu));
        let _ = writeln!(out, "100 - self-BLEU  {}", fmt(self.diversity));
        let _ = writeln!(out, "gold self-BLEU   {}", fmt(self.gold_self_bleu));
        out
    }
}
