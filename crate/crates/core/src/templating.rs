//! Cross-schema common vocabulary and question templates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::{ExamplePair, SchemaCatalog};
use crate::retrieval::RetrievalHit;

pub const MASK: &str = "MASK";

#[derive(Debug, thiserror::Error)]
pub enum TemplatingError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("example {index} names db_id `{db_id}` which is not in the schema catalog")]
    UnknownDb { index: usize, db_id: String },
    #[error("question has no tokens")]
    EmptyQuestion,
    #[error("vocabulary file {path}: {message}")]
    File { path: String, message: String },
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Splits on whitespace and peels leading and trailing punctuation off each
/// chunk as single-character tokens. Casing is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let start = chunk.find(|c| !is_punct(c));
        let Some(start) = start else {
            out.extend(chunk.chars().map(String::from));
            continue;
        };
        let end = chunk.rfind(|c| !is_punct(c)).unwrap();
        let end = end + chunk[end..].chars().next().unwrap().len_utf8();
        out.extend(chunk[..start].chars().map(String::from));
        out.push(chunk[start..end].to_string());
        out.extend(chunk[end..].chars().map(String::from));
    }
    out
}

/// Lowercased tokens, as used for vocabulary counts and BLEU.
pub fn tokenize_lower(text: &str) -> Vec<String> {
    tokenize(&text.to_lowercase())
}

pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punct)
}

pub fn is_number(token: &str) -> bool {
    token.chars().any(|c| c.is_ascii_digit())
}

/// For each word, the fraction of schemas whose questions use it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonVocabulary {
    pub fractions: BTreeMap<String, f64>,
    pub schema_count: usize,
    pub keep_threshold: f64,
}

impl CommonVocabulary {
    pub fn fraction(&self, word: &str) -> f64 {
        self.fractions
            .get(&word.to_lowercase())
            .copied()
            .unwrap_or(0.0)
    }

    /// Words are kept only if strictly more common than the threshold.
    pub fn is_common(&self, word: &str) -> bool {
        self.fraction(word) > self.keep_threshold
    }

    pub fn with_threshold(mut self, keep_threshold: f64) -> Self {
        self.keep_threshold = keep_threshold;
        self
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TemplatingError> {
        let path = path.as_ref();
        let err = |message: String| TemplatingError::File {
            path: path.display().to_string(),
            message,
        };
        let text = serde_json::to_string_pretty(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemplatingError> {
        let path = path.as_ref();
        let err = |message: String| TemplatingError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

/// Counts, for each lowercased word, how many distinct databases have at
/// least one question using it.
pub fn build_common_vocabulary(
    examples: &[ExamplePair],
    catalog: &SchemaCatalog,
    keep_threshold: f64,
) -> Result<CommonVocabulary, TemplatingError> {
    if examples.is_empty() {
        return Err(TemplatingError::EmptyCorpus);
    }
    let mut words_by_db: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for (index, ex) in examples.iter().enumerate() {
        if !catalog.contains_key(&ex.db_id) {
            return Err(TemplatingError::UnknownDb {
                index,
                db_id: ex.db_id.clone(),
            });
        }
        let words = words_by_db.entry(&ex.db_id).or_default();
        words.extend(
            tokenize_lower(&ex.question)
                .into_iter()
                .filter(|t| !is_punctuation(t)),
        );
    }
    let schema_count = words_by_db.len();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for words in words_by_db.into_values() {
        for w in words {
            *counts.entry(w).or_default() += 1;
        }
    }
    let fractions = counts
        .into_iter()
        .map(|(w, n)| (w, n as f64 / schema_count as f64))
        .collect();
    Ok(CommonVocabulary {
        fractions,
        schema_count,
        keep_threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateToken {
    Word(String),
    Mask,
}

impl TemplateToken {
    pub fn is_mask(&self) -> bool {
        matches!(self, TemplateToken::Mask)
    }
}

/// Where a template came from: the retrieved training pair and its distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSource {
    pub example_id: usize,
    pub pair: ExamplePair,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub tokens: Vec<TemplateToken>,
    pub source: Option<TemplateSource>,
}

impl QuestionTemplate {
    pub fn mask_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.is_mask()).count()
    }

    /// The non-MASK tokens in order.
    pub fn anchors(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().filter_map(|t| match t {
            TemplateToken::Word(w) => Some(w.as_str()),
            TemplateToken::Mask => None,
        })
    }

    pub fn text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for QuestionTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            match t {
                TemplateToken::Word(w) => f.write_str(w)?,
                TemplateToken::Mask => f.write_str(MASK)?,
            }
        }
        Ok(())
    }
}

/// Replaces schema-specific words and numbers with MASK, collapsing runs.
/// Punctuation is always kept.
pub fn mask_schema_tokens(
    question: &str,
    vocab: &CommonVocabulary,
) -> Result<QuestionTemplate, TemplatingError> {
    let mut tokens: Vec<TemplateToken> = Vec::new();
    for tok in tokenize(question) {
        let keep = is_punctuation(&tok) || (!is_number(&tok) && vocab.is_common(&tok));
        if keep {
            tokens.push(TemplateToken::Word(tok));
        } else if !tokens.last().is_some_and(TemplateToken::is_mask) {
            tokens.push(TemplateToken::Mask);
        }
    }
    if tokens.is_empty() {
        return Err(TemplatingError::EmptyQuestion);
    }
    Ok(QuestionTemplate {
        tokens,
        source: None,
    })
}

/// Template for a retrieval hit, carrying the hit as its source.
pub fn template_from_hit(
    hit: &RetrievalHit,
    vocab: &CommonVocabulary,
) -> Result<QuestionTemplate, TemplatingError> {
    let mut t = mask_schema_tokens(&hit.pair.question, vocab)?;
    t.source = Some(TemplateSource {
        example_id: hit.example_id,
        pair: hit.pair.clone(),
        distance: hit.distance,
    });
    Ok(t)
}
