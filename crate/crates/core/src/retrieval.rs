//! Structural retrieval of training pairs by normalized tree edit distance.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{partition_parseable, ExamplePair, Quarantined, SchemaCatalog};
use crate::sql::{anonymize, AlgebraTree, ALPHABET_VERSION};
use crate::ted::{self, PostorderTree};

/// How a raw edit distance is scaled into [0, 1].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    /// `ted / (|a| + |b|)`
    #[default]
    SizeSum,
    /// `ted / max(|a|, |b|)`
    MaxSize,
}

impl Normalizer {
    pub fn apply(self, ted: usize, n1: usize, n2: usize) -> f64 {
        let denom = match self {
            Normalizer::SizeSum => n1 + n2,
            Normalizer::MaxSize => n1.max(n2),
        };
        if denom == 0 {
            0.0
        } else {
            ted as f64 / denom as f64
        }
    }

    /// Lower bound on the normalized distance implied by sizes alone, since
    /// the edit distance is at least the node-count difference.
    fn lower_bound(self, n1: usize, n2: usize) -> f64 {
        self.apply(n1.abs_diff(n2), n1, n2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalParams {
    /// Hits must be strictly below this distance.
    pub threshold: f64,
    pub normalizer: Normalizer,
    /// Maximum hits returned per query.
    pub max_hits: usize,
    /// Skip pairs whose size difference already rules them out.
    pub size_prefilter: bool,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            normalizer: Normalizer::SizeSum,
            max_hits: 10,
            size_prefilter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    /// Position of the pair in the corpus it was built from.
    pub example_id: usize,
    pub pair: ExamplePair,
    pub tree: AlgebraTree,
    pub node_count: usize,
    hash: String,
}

#[derive(Debug, Clone, Default)]
pub struct RetrievalIndex {
    entries: Vec<IndexEntry>,
    quarantined: Vec<Quarantined>,
}

impl RetrievalIndex {
    /// Parses and anonymizes every example; those that fail to parse are
    /// quarantined rather than dropped.
    pub fn build(examples: &[ExamplePair], catalog: &SchemaCatalog) -> Self {
        let (ok, quarantined) = partition_parseable(examples, catalog);
        let mut index = Self {
            entries: Vec::with_capacity(ok.len()),
            quarantined,
        };
        for (example_id, pair, tree) in ok {
            index.push(example_id, pair, &tree);
        }
        index
    }

    pub fn push(&mut self, example_id: usize, pair: ExamplePair, tree: &AlgebraTree) {
        let tree = anonymize(tree);
        self.entries.push(IndexEntry {
            example_id,
            pair,
            node_count: tree.node_count(),
            hash: tree.content_hash(),
            tree,
        });
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn quarantined(&self) -> &[Quarantined] {
        &self.quarantined
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub example_id: usize,
    pub pair: ExamplePair,
    pub distance: f64,
}

pub fn tree_edit_distance(a: &AlgebraTree, b: &AlgebraTree) -> usize {
    ted::tree_edit_distance(a.root(), b.root())
}

pub fn normalized_distance(a: &AlgebraTree, b: &AlgebraTree, normalizer: Normalizer) -> f64 {
    normalizer.apply(tree_edit_distance(a, b), a.node_count(), b.node_count())
}

/// Index entries strictly closer than `params.threshold` to `query`, nearest
/// first, ties in index order, at most `params.max_hits`.
pub fn get_related_queries(
    query: &AlgebraTree,
    index: &RetrievalIndex,
    params: &RetrievalParams,
    cache: Option<&DistanceCache>,
) -> Vec<RetrievalHit> {
    let anonymized;
    let query = if query.is_anonymized() {
        query
    } else {
        anonymized = anonymize(query);
        &anonymized
    };
    let q_post = PostorderTree::new(query.root());
    let q_hash = cache.map(|_| query.content_hash());
    let n1 = query.node_count();

    let mut hits: Vec<(usize, f64)> = index
        .entries
        .par_iter()
        .enumerate()
        .filter_map(|(i, e)| {
            if params.size_prefilter
                && params.normalizer.lower_bound(n1, e.node_count) >= params.threshold
            {
                return None;
            }
            let ted = match (cache, &q_hash) {
                (Some(c), Some(h)) => c.get_or_compute(h, &e.hash, || {
                    ted::distance(&q_post, &PostorderTree::new(e.tree.root()))
                }),
                _ => ted::distance(&q_post, &PostorderTree::new(e.tree.root())),
            };
            let d = params.normalizer.apply(ted, n1, e.node_count);
            (d < params.threshold).then_some((i, d))
        })
        .collect();
    // par_iter collect preserves index order, so a stable sort keeps ties in it.
    hits.sort_by(|a, b| a.1.total_cmp(&b.1));
    hits.truncate(params.max_hits);
    hits.into_iter()
        .map(|(i, distance)| {
            let e = &index.entries[i];
            RetrievalHit {
                example_id: e.example_id,
                pair: e.pair.clone(),
                distance,
            }
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheFile {
    alphabet_version: u32,
    distances: BTreeMap<String, usize>,
}

/// Persistent memo of raw edit distances keyed by the two trees' content
/// hashes. A file written under a different alphabet version is ignored.
#[derive(Debug)]
pub struct DistanceCache {
    path: PathBuf,
    distances: Mutex<BTreeMap<String, usize>>,
}

impl DistanceCache {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let distances = match std::fs::read(&path) {
            Ok(bytes) => match serde_json::from_slice::<CacheFile>(&bytes) {
                Ok(f) if f.alphabet_version == ALPHABET_VERSION => f.distances,
                Ok(_) => {
                    log::info!(
                        "distance cache {} is for another alphabet version; starting fresh",
                        path.display()
                    );
                    BTreeMap::new()
                }
                Err(e) => {
                    log::warn!("ignoring unreadable distance cache {}: {e}", path.display());
                    BTreeMap::new()
                }
            },
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e),
        };
        Ok(Self {
            path,
            distances: Mutex::new(distances),
        })
    }

    fn key(a: &str, b: &str) -> String {
        // Edit distance is symmetric.
        if a <= b {
            format!("{a}:{b}")
        } else {
            format!("{b}:{a}")
        }
    }

    pub fn get(&self, a: &str, b: &str) -> Option<usize> {
        self.distances
            .lock()
            .unwrap()
            .get(&Self::key(a, b))
            .copied()
    }

    fn get_or_compute(&self, a: &str, b: &str, f: impl FnOnce() -> usize) -> usize {
        let key = Self::key(a, b);
        if let Some(&d) = self.distances.lock().unwrap().get(&key) {
            return d;
        }
        let d = f();
        self.distances.lock().unwrap().insert(key, d);
        d
    }

    pub fn len(&self) -> usize {
        self.distances.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the cache atomically (temp file, then rename).
    pub fn save(&self) -> std::io::Result<()> {
        let file = CacheFile {
            alphabet_version: ALPHABET_VERSION,
            distances: self.distances.lock().unwrap().clone(),
        };
        if let Some(parent) = self.path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let tmp = self.path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(&file)?)?;
        std::fs::rename(tmp, &self.path)
    }
}
