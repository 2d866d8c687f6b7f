//! Seeded replacement of query constants with other values of the same
//! column, so that a parser cannot lean on memorized literals.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Duration;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::db::{CellValue, Database, DbError};
use crate::ingest::{CategorySplit, ColumnKey, ExamplePair, SchemaCatalog};
use crate::seeding;
use crate::sql::{anonymize, constant_sites, emit_sql, parse_sql, Literal};

#[derive(Debug, thiserror::Error)]
pub enum PerturbError {
    #[error("fraction must be in [0, 1], got {0}")]
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbStatus {
    Altered,
    NoConstants,
    NoAlternatives,
    Unparseable,
    MissingDatabase,
    /// The rewritten query failed to parse or run; the original was kept.
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub path: Vec<usize>,
    pub column: String,
    pub old: String,
    pub new: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationEntry {
    pub index: usize,
    pub db_id: String,
    pub status: PerturbStatus,
    pub original: String,
    pub replacements: Vec<Replacement>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub total: usize,
    pub selected: usize,
    pub altered: usize,
    /// Questions keep their original wording and may mention stale values.
    pub questions_rewritten: bool,
    /// One entry per selected query, in corpus order.
    pub entries: Vec<PerturbationEntry>,
}

#[derive(Debug, Clone, Copy)]
pub struct PerturbParams<'a> {
    pub fraction: f64,
    pub seed: u64,
    /// Sample the fraction within each category instead of globally.
    pub per_category: Option<&'a CategorySplit>,
    pub timeout: Duration,
}

impl Default for PerturbParams<'_> {
    fn default() -> Self {
        Self {
            fraction: 0.7,
            seed: 0,
            per_category: None,
            timeout: Duration::from_secs(5),
        }
    }
}

/// ⌊fraction·n⌋, robust to products such as 0.7·10 landing just below an
/// integer.
pub fn selection_size(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

fn sample(pool: &[usize], fraction: f64, seed: u64, stage: &str) -> Vec<usize> {
    let k = selection_size(fraction, pool.len());
    let mut rng = seeding::stream(seed, stage, 0);
    rand::seq::index::sample(&mut rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Indices of the queries to perturb, ascending.
pub fn select(examples: &[ExamplePair], params: &PerturbParams) -> Vec<usize> {
    let mut chosen = match params.per_category {
        None => sample(
            &(0..examples.len()).collect::<Vec<_>>(),
            params.fraction,
            params.seed,
            "perturb-select",
        ),
        Some(split) => {
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, e) in examples.iter().enumerate() {
                groups
                    .entry(split.category_of(&e.db_id))
                    .or_default()
                    .push(i);
            }
            groups
                .iter()
                .flat_map(|(cat, pool)| {
                    sample(
                        pool,
                        params.fraction,
                        params.seed,
                        &format!("perturb-select/{cat}"),
                    )
                })
                .collect()
        }
    };
    chosen.sort_unstable();
    chosen
}

/// Opens databases and reads column values once each.
struct Values<'a> {
    root: &'a Path,
    dbs: BTreeMap<String, Result<Database, DbError>>,
    columns: BTreeMap<(String, ColumnKey), Vec<CellValue>>,
}

impl Values<'_> {
    fn db(&mut self, db_id: &str) -> Result<&Database, String> {
        let root = self.root;
        self.dbs
            .entry(db_id.to_string())
            .or_insert_with(|| Database::open_in(root, db_id))
            .as_ref()
            .map_err(|e| e.to_string())
    }

    fn column(&mut self, db_id: &str, key: &ColumnKey) -> Vec<CellValue> {
        let k = (db_id.to_string(), key.clone());
        if let Some(v) = self.columns.get(&k) {
            return v.clone();
        }
        let values = match self.db(db_id) {
            Ok(db) => db.distinct_values(key).unwrap_or_else(|e| {
                log::warn!("{db_id}: reading {key}: {e}");
                vec![]
            }),
            Err(_) => vec![],
        };
        self.columns.insert(k, values.clone());
        values
    }
}

/// Replaces the constants of a seeded ⌊fraction·N⌋ sample of queries. Every
/// selected query is reported; a query that cannot be altered safely is
/// passed through unchanged.
pub fn replace_constants(
    examples: &[ExamplePair],
    catalog: &SchemaCatalog,
    db_root: &Path,
    params: &PerturbParams,
) -> Result<(Vec<ExamplePair>, PerturbationReport), PerturbError> {
    if !(0.0..=1.0).contains(&params.fraction) {
        return Err(PerturbError::Fraction(params.fraction));
    }
    let selected = select(examples, params);
    let mut out = examples.to_vec();
    let mut values = Values {
        root: db_root,
        dbs: BTreeMap::new(),
        columns: BTreeMap::new(),
    };
    let mut entries = Vec::with_capacity(selected.len());
    for &i in &selected {
        let (entry, query) = perturb_one(i, &examples[i], catalog, &mut values, params);
        if let Some(q) = query {
            out[i].query = q;
        }
        entries.push(entry);
    }
    let altered = entries
        .iter()
        .filter(|e| e.status == PerturbStatus::Altered)
        .count();
    Ok((
        out,
        PerturbationReport {
            total: examples.len(),
            selected: selected.len(),
            altered,
            questions_rewritten: false,
            entries,
        },
    ))
}

fn perturb_one(
    index: usize,
    example: &ExamplePair,
    catalog: &SchemaCatalog,
    values: &mut Values,
    params: &PerturbParams,
) -> (PerturbationEntry, Option<String>) {
    let mut entry = PerturbationEntry {
        index,
        db_id: example.db_id.clone(),
        status: PerturbStatus::Unparseable,
        original: example.query.clone(),
        replacements: vec![],
        message: None,
    };
    let fail = |mut entry: PerturbationEntry, status, message: String| {
        entry.status = status;
        entry.message = Some(message);
        entry.replacements.clear();
        (entry, None)
    };
    let Some(schema) = catalog.get(&example.db_id) else {
        return fail(
            entry,
            PerturbStatus::Unparseable,
            format!("unknown db_id `{}`", example.db_id),
        );
    };
    let mut tree = match parse_sql(&example.query, schema) {
        Ok(t) => t,
        Err(e) => return fail(entry, PerturbStatus::Unparseable, e.to_string()),
    };
    let sites = constant_sites(&tree);
    if sites.is_empty() {
        entry.status = PerturbStatus::NoConstants;
        return (entry, None);
    }
    if let Err(e) = values.db(&example.db_id) {
        return fail(entry, PerturbStatus::MissingDatabase, e);
    }
    let mut rng = seeding::stream(params.seed, "perturb", index as u64);
    for site in &sites {
        let current = Literal {
            kind: site.kind,
            text: site.value.clone(),
        };
        let mut seen = BTreeSet::new();
        let alternatives: Vec<Literal> = values
            .column(&example.db_id, &site.column)
            .iter()
            .filter(|v| !v.matches_literal(&current))
            .filter_map(|v| v.to_literal(site.kind))
            .filter(|l| l.text != current.text && seen.insert(l.text.clone()))
            .collect();
        if let Some(new) = alternatives.choose(&mut rng) {
            tree.replace_literal(&site.path, new.clone());
            entry.replacements.push(Replacement {
                path: site.path.clone(),
                column: site.column.to_string(),
                old: current.text,
                new: new.text.clone(),
            });
        }
    }
    if entry.replacements.is_empty() {
        entry.status = PerturbStatus::NoAlternatives;
        return (entry, None);
    }
    let query = match emit_sql(&tree) {
        Ok(q) => q,
        Err(e) => return fail(entry, PerturbStatus::Invalid, e.to_string()),
    };
    match parse_sql(&query, schema) {
        Ok(t) if anonymize(&t) == anonymize(&tree) => {}
        Ok(_) => {
            return fail(
                entry,
                PerturbStatus::Invalid,
                format!("structure changed: {query}"),
            )
        }
        Err(e) => return fail(entry, PerturbStatus::Invalid, format!("{query}: {e}")),
    }
    let db = values.db(&example.db_id).expect("opened above");
    if let Err(e) = db.execute(&query, params.timeout) {
        return fail(entry, PerturbStatus::Invalid, format!("{query}: {e}"));
    }
    entry.status = PerturbStatus::Altered;
    (entry, Some(query))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn selection_size_floors() {
        assert_eq!(selection_size(0.7, 10), 7);
        assert_eq!(selection_size(0.7, 7000), 4900);
        assert_eq!(selection_size(0.0, 10), 0);
        assert_eq!(selection_size(1.0, 3), 3);
        assert_eq!(selection_size(0.5, 3), 1);
    }

    fn pairs(n: usize) -> Vec<ExamplePair> {
        (0..n)
            .map(|i| ExamplePair::new("q", "SELECT 1", format!("db{}", i % 3)))
            .collect()
    }

    #[test]
    fn bad_fraction() {
        let r = replace_constants(
            &[],
            &SchemaCatalog::new(),
            Path::new("."),
            &PerturbParams {
                fraction: 1.5,
                ..Default::default()
            },
        );
        assert!(matches!(r, Err(PerturbError::Fraction(_))));
    }

    proptest! {
        #[test]
        fn selection_is_seeded_and_sized(n in 0usize..60, f in 0.0f64..=1.0, seed in any::<u64>()) {
            let ex = pairs(n);
            let p = PerturbParams { fraction: f, seed, ..Default::default() };
            let a = select(&ex, &p);
            prop_assert_eq!(a.len(), selection_size(f, n));
            prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(a, select(&ex, &p));
        }
    }
}
