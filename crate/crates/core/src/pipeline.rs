//! End-to-end runs of one strategy from a [`RunConfig`], writing the dataset,
//! an audit trail, a summary and timings to the output directory.
//!
//! Everything except `timing.json` is a pure function of the configuration
//! and inputs, so repeated runs produce byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, ProviderKind, RunConfig, Strategy};
use crate::db::Database;
use crate::generate::{
    get_explanation, reformer_augment, CandidateQuestion, ExplanationRole, NewQuery, Provenance,
    QueryOutcome, ReformerParams,
};
use crate::ingest::{
    load_examples, load_schemas, write_examples, CategorySplit, ExamplePair, Quarantined,
    SchemaCatalog,
};
use crate::llm::http::HttpProvider;
use crate::llm::stub::StubProvider;
use crate::llm::{LlmClient, LlmError, Provider, ResponseCache, RetryPolicy};
use crate::metrics::{group_sets, quality_report};
use crate::paraphrase::{
    craft_and_fill_sql, describe_and_paraphrase, paraphrase_with_schema, CraftedQuery,
    ParaphraseError, TemplatePack,
};
use crate::perturb::{replace_constants, PerturbParams, PerturbationEntry};
use crate::retrieval::{DistanceCache, RetrievalIndex, RetrievalParams};
use crate::templating::build_common_vocabulary;
use crate::validate::{cycle_validate, ValidateError, ValidationVerdict};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SUMMARY_TEXT_FILE: &str = "summary.txt";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("input: {0}")]
    Input(String),
    #[error("provider authentication failed: {0}")]
    Auth(String),
    #[error("{0}")]
    Run(String),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl From<LlmError> for PipelineError {
    fn from(e: LlmError) -> Self {
        if e.is_auth() {
            PipelineError::Auth(e.to_string())
        } else {
            PipelineError::Run(e.to_string())
        }
    }
}

/// Where a record came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceRefs {
    /// Index of the new query (reformer) or training example (paraphrase).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_index: Option<usize>,
    /// Question template text, or the SQL template id for crafted queries.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    /// Training example the question template was derived from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_example: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_explanation: Option<String>,
}

/// One line of the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub question: String,
    pub query: String,
    pub db_id: String,
    pub provenance: Provenance,
    pub similarity: Option<f64>,
    pub run_id: String,
    pub sources: SourceRefs,
}

impl AugmentationRecord {
    fn from_candidate(c: &CandidateQuestion, run_id: &str, input_index: usize) -> Self {
        Self {
            question: c.question.clone(),
            query: c.query.clone(),
            db_id: c.db_id.clone(),
            provenance: c.provenance,
            similarity: c.similarity,
            run_id: run_id.to_string(),
            sources: SourceRefs {
                input_index: Some(input_index),
                template: c.template.clone(),
                template_example: c.template_source.as_ref().map(|s| s.example_id),
                explanation: c.explanation.clone(),
                validation_explanation: c.validation_explanation.clone(),
            },
        }
    }
}

/// One line of the audit file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    Quarantined(Quarantined),
    Query(QueryOutcome),
    Paraphrase {
        index: usize,
        db_id: String,
        tables: Vec<String>,
        dropped_tables: Vec<String>,
        fell_back: bool,
        verdicts: Vec<ValidationVerdict>,
        error: Option<String>,
    },
    Crafted {
        crafted: CraftedQuery,
        verdicts: Vec<ValidationVerdict>,
        error: Option<String>,
    },
    MissingDatabase {
        db_id: String,
        message: String,
    },
    Perturbation(PerturbationEntry),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: Strategy,
    pub run_id: String,
    pub provider: String,
    pub model: String,
    pub counts: BTreeMap<String, usize>,
    pub acceptance_rate: Option<f64>,
    /// Strategy-specific scores, such as BLEU for `evaluate`.
    pub scores: BTreeMap<String, f64>,
}

impl Summary {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "strategy   {}", self.strategy.as_str());
        let _ = writeln!(out, "run id     {}", self.run_id);
        let _ = writeln!(out, "provider   {} ({})", self.provider, self.model);
        for (k, v) in &self.counts {
            let _ = writeln!(out, "{k:<24} {v}");
        }
        if let Some(r) = self.acceptance_rate {
            let _ = writeln!(out, "{:<24} {:.4}", "acceptance_rate", r);
        }
        for (k, v) in &self.scores {
            let _ = writeln!(out, "{k:<24} {v:.2}");
        }
        out
    }
}

#[derive(Debug, Clone, Default, Serialize)]
struct Timing {
    stages_ms: BTreeMap<String, f64>,
    provider_calls: u64,
    cache_hits: u64,
    retries: u64,
    distance_cache_entries: Option<usize>,
}

struct Stopwatch {
    timing: Timing,
    last: Instant,
}

impl Stopwatch {
    fn new() -> Self {
        Self {
            timing: Timing::default(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timing
            .stages_ms
            .insert(stage.to_string(), (now - self.last).as_secs_f64() * 1000.0);
        self.last = now;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub summary: Summary,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_jsonl<T: Serialize>(
    path: &Path,
    items: impl IntoIterator<Item = T>,
) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, &item).expect("records serialize");
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_dataset(path: &Path) -> Result<Vec<AugmentationRecord>, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::Input(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn input<T>(r: Result<T, impl std::fmt::Display>) -> Result<T, PipelineError> {
    r.map_err(|e| PipelineError::Input(e.to_string()))
}

fn required<'a>(p: &'a Option<PathBuf>, field: &'static str) -> Result<&'a Path, PipelineError> {
    p.as_deref().ok_or_else(|| {
        ConfigError::Invalid {
            field,
            message: "required for this strategy".into(),
        }
        .into()
    })
}

/// Identifies a run by its settings and input contents, independent of
/// where the files live.
pub fn run_id(config: &RunConfig) -> Result<String, PipelineError> {
    let p = &config.paths;
    let mut inputs = BTreeMap::new();
    for (name, path) in [
        ("train", &p.train),
        ("schemas", &p.schemas),
        ("new_queries", &p.new_queries),
        ("categories", &p.categories),
        ("templates", &p.templates),
        ("dataset", &p.dataset),
        ("gold", &p.gold),
    ] {
        if let Some(path) = path {
            let bytes = std::fs::read(path)
                .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
            inputs.insert(name, hex::encode(Sha256::digest(bytes)));
        }
    }
    let (model, embedding) = match config.provider.kind {
        ProviderKind::Stub => (String::new(), String::new()),
        ProviderKind::Http => (
            config.provider.http.chat_model.clone(),
            config.provider.http.embedding_model.clone(),
        ),
    };
    let identity = serde_json::json!({
        "strategy": config.strategy,
        "seed": config.seed,
        "normalizer": config.normalizer,
        "smoothing": config.smoothing,
        "thresholds": config.thresholds,
        "options": config.options,
        "generation": config.generation,
        "paraphrase": config.paraphrase,
        "provider": [config.provider.kind, model, embedding],
        "inputs": inputs,
    });
    Ok(hex::encode(
        &Sha256::digest(identity.to_string().as_bytes())[..8],
    ))
}

pub fn build_client(config: &RunConfig) -> Result<LlmClient, PipelineError> {
    let pc = &config.provider;
    let provider: Arc<dyn Provider> = match pc.kind {
        ProviderKind::Stub => Arc::new(StubProvider::new()),
        ProviderKind::Http => Arc::new(
            HttpProvider::from_env(pc.http.clone())
                .map_err(|e| PipelineError::Auth(e.to_string()))?,
        ),
    };
    let mut client = LlmClient::new(provider)
        .with_retry(RetryPolicy {
            max_attempts: pc.retry_attempts,
            base_delay: std::time::Duration::from_millis(pc.retry_base_ms),
            max_delay: std::time::Duration::from_millis(pc.retry_max_ms),
        })
        .with_max_in_flight(pc.max_in_flight);
    if let Some(r) = pc.requests_per_second {
        client = client.with_rate_limit(r);
    }
    if let Some(dir) = &config.paths.cache_dir {
        let root = dir.join("llm");
        client = client.with_cache(ResponseCache::new(&root).map_err(io_err(&root))?);
    }
    Ok(client)
}

/// Accumulated outputs of a strategy.
#[derive(Default)]
struct Collected {
    records: Vec<AugmentationRecord>,
    audit: Vec<AuditEvent>,
    counts: BTreeMap<String, usize>,
    acceptance_rate: Option<f64>,
    scores: BTreeMap<String, f64>,
}

impl Collected {
    fn count(&mut self, key: &str, n: usize) {
        *self.counts.entry(key.to_string()).or_insert(0) += n;
    }

    fn rate(&mut self, accepted: &str, scored: &str) {
        let (a, s) = (
            self.counts.get(accepted).copied().unwrap_or(0),
            self.counts.get(scored).copied().unwrap_or(0),
        );
        self.acceptance_rate = (s > 0).then(|| a as f64 / s as f64);
    }
}

/// Validates the config, runs its strategy, and writes all artifacts.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let mut watch = Stopwatch::new();
    let out_dir = required(&config.paths.output_dir, "paths.output_dir")?.to_path_buf();
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let run_id = run_id(config)?;
    let needs_client = matches!(
        config.strategy,
        Strategy::Reformer | Strategy::Paraphrase | Strategy::Craft
    );
    let client = if needs_client {
        Some(build_client(config)?)
    } else {
        None
    };
    watch.lap("setup");

    let collected = match config.strategy {
        Strategy::Reformer => run_reformer(config, client.as_ref().unwrap(), &run_id, &mut watch)?,
        Strategy::Paraphrase => {
            run_paraphrase(config, client.as_ref().unwrap(), &run_id, &mut watch)?
        }
        Strategy::Craft => run_craft(config, client.as_ref().unwrap(), &run_id, &mut watch)?,
        Strategy::Perturb => run_perturb(config, &out_dir, &mut watch)?,
        Strategy::Evaluate => run_evaluate(config, &out_dir, &mut watch)?,
    };

    let (provider, model) = match &client {
        Some(c) => (
            c.provider().name().to_string(),
            c.provider().model_id().to_string(),
        ),
        None => ("none".to_string(), String::new()),
    };
    let summary = Summary {
        strategy: config.strategy,
        run_id,
        provider,
        model,
        counts: collected.counts,
        acceptance_rate: collected.acceptance_rate,
        scores: collected.scores,
    };
    if config.strategy != Strategy::Perturb && config.strategy != Strategy::Evaluate {
        write_jsonl(&out_dir.join(DATASET_FILE), &collected.records)?;
    }
    write_jsonl(&out_dir.join(AUDIT_FILE), &collected.audit)?;
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    let text_path = out_dir.join(SUMMARY_TEXT_FILE);
    std::fs::write(&text_path, summary.to_text()).map_err(io_err(&text_path))?;
    watch.lap("write");
    if let Some(c) = &client {
        let s = c.stats();
        watch.timing.provider_calls = s.provider_calls;
        watch.timing.cache_hits = s.cache_hits;
        watch.timing.retries = s.retries;
    }
    write_json(&out_dir.join(TIMING_FILE), &watch.timing)?;
    Ok(RunOutcome {
        output_dir: out_dir,
        summary,
    })
}

fn load_catalog(config: &RunConfig) -> Result<SchemaCatalog, PipelineError> {
    input(load_schemas(required(
        &config.paths.schemas,
        "paths.schemas",
    )?))
}

fn load_train(config: &RunConfig) -> Result<Vec<ExamplePair>, PipelineError> {
    input(load_examples(required(&config.paths.train, "paths.train")?))
}

fn run_reformer(
    config: &RunConfig,
    client: &LlmClient,
    run_id: &str,
    watch: &mut Stopwatch,
) -> Result<Collected, PipelineError> {
    let catalog = load_catalog(config)?;
    let train = load_train(config)?;
    let path = required(&config.paths.new_queries, "paths.new_queries")?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    let new_queries: Vec<NewQuery> = input(serde_json::from_str(&text))?;
    watch.lap("load");

    let index = RetrievalIndex::build(&train, &catalog);
    let vocab = input(build_common_vocabulary(
        &train,
        &catalog,
        config.thresholds.keep,
    ))?;
    let distances = match &config.paths.cache_dir {
        Some(dir) => {
            let p = dir.join("ted.json");
            Some(DistanceCache::open(&p).map_err(io_err(&p))?)
        }
        None => None,
    };
    watch.lap("index");

    let params = ReformerParams {
        retrieval: RetrievalParams {
            threshold: config.thresholds.ted,
            normalizer: config.normalizer,
            max_hits: config.thresholds.max_hits,
            ..Default::default()
        },
        lambda: config.thresholds.lambda,
        top_k: config.thresholds.top_k,
        generation: config.generation,
    };
    let outcomes = reformer_augment(
        &new_queries,
        &catalog,
        &index,
        &vocab,
        client,
        &params,
        distances.as_ref(),
    )?;
    watch.lap("generate");
    if let Some(d) = &distances {
        d.save()
            .map_err(|e| PipelineError::Run(format!("saving distance cache: {e}")))?;
        watch.timing.distance_cache_entries = Some(d.len());
    }

    let mut c = Collected::default();
    c.count("training_pairs", train.len());
    c.count("quarantined", index.quarantined().len());
    c.count("new_queries", new_queries.len());
    c.audit.extend(
        index
            .quarantined()
            .iter()
            .cloned()
            .map(AuditEvent::Quarantined),
    );
    for o in &outcomes {
        c.count("retrieval_hits", o.hits);
        c.count("templates", o.templates.len());
        c.count("fill_failures", o.fill_failures.len());
        c.count("candidates_scored", o.verdicts.len());
        c.count("skipped_queries", usize::from(o.skipped.is_some()));
        let before = c.records.len();
        c.records.extend(
            o.accepted()
                .map(|cand| AugmentationRecord::from_candidate(cand, run_id, o.index)),
        );
        c.count("accepted", c.records.len() - before);
    }
    c.rate("accepted", "candidates_scored");
    c.audit.extend(outcomes.into_iter().map(AuditEvent::Query));
    Ok(c)
}

/// Cycle-validates candidates for `query` against a fresh explanation.
/// Credential failures end the run; anything else is reported per item.
fn validate_for(
    client: &LlmClient,
    config: &RunConfig,
    query: &str,
    mut candidates: Vec<CandidateQuestion>,
    lambda: f64,
) -> Result<Result<Vec<ValidationVerdict>, String>, PipelineError> {
    let expl2 = match get_explanation(
        client,
        query,
        ExplanationRole::ForValidate,
        None,
        &config.generation,
    ) {
        Ok(e) => e,
        Err(e) if e.is_auth() => return Err(PipelineError::Auth(e.to_string())),
        Err(e) => return Ok(Err(e.to_string())),
    };
    for c in &mut candidates {
        c.validation_explanation = Some(expl2.text.clone());
    }
    match cycle_validate(candidates, &expl2, client, lambda, config.thresholds.top_k) {
        Ok(v) => Ok(Ok(v)),
        Err(ValidateError::Llm(e)) if e.is_auth() => Err(e.into()),
        Err(e) => Ok(Err(e.to_string())),
    }
}

fn accepted_in_rank_order(verdicts: &[ValidationVerdict]) -> Vec<&CandidateQuestion> {
    let mut accepted: Vec<&ValidationVerdict> = verdicts.iter().filter(|v| v.accepted).collect();
    accepted.sort_by_key(|v| v.rank);
    accepted.into_iter().map(|v| &v.candidate).collect()
}

fn run_paraphrase(
    config: &RunConfig,
    client: &LlmClient,
    run_id: &str,
    watch: &mut Stopwatch,
) -> Result<Collected, PipelineError> {
    let catalog = load_catalog(config)?;
    let mut train = load_train(config)?;
    if let Some(limit) = config.options.limit {
        train.truncate(limit);
    }
    watch.lap("load");
    let n = config.options.paraphrases;
    let events: Vec<AuditEvent> = train
        .par_iter()
        .enumerate()
        .map(|(index, ex)| {
            let (mut tables, mut dropped_tables, mut fell_back) = (vec![], vec![], false);
            let (mut verdicts, mut error) = (vec![], None);
            match paraphrase_with_schema(ex, &catalog, client, n, &config.paraphrase) {
                Err(e) if e.is_auth() => return Err(PipelineError::Auth(e.to_string())),
                Err(e) => error = Some(e.to_string()),
                Ok(p) => {
                    (tables, dropped_tables, fell_back) = (p.tables, p.dropped, p.fell_back);
                    if !p.candidates.is_empty() {
                        match validate_for(
                            client,
                            config,
                            &ex.query,
                            p.candidates,
                            config.thresholds.paraphrase_lambda,
                        )? {
                            Ok(v) => verdicts = v,
                            Err(e) => error = Some(e),
                        }
                    }
                }
            }
            Ok(AuditEvent::Paraphrase {
                index,
                db_id: ex.db_id.clone(),
                tables,
                dropped_tables,
                fell_back,
                verdicts,
                error,
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    watch.lap("generate");

    let mut c = Collected::default();
    c.count("training_pairs", train.len());
    for e in &events {
        let AuditEvent::Paraphrase {
            index,
            verdicts,
            error,
            fell_back,
            ..
        } = e
        else {
            unreachable!()
        };
        c.count("failed_items", usize::from(error.is_some()));
        c.count("table_fallbacks", usize::from(*fell_back));
        c.count("candidates_scored", verdicts.len());
        let accepted = accepted_in_rank_order(verdicts);
        c.count("accepted", accepted.len());
        c.records.extend(
            accepted
                .into_iter()
                .map(|cand| AugmentationRecord::from_candidate(cand, run_id, *index)),
        );
    }
    c.rate("accepted", "candidates_scored");
    c.audit = events;
    Ok(c)
}

fn run_craft(
    config: &RunConfig,
    client: &LlmClient,
    run_id: &str,
    watch: &mut Stopwatch,
) -> Result<Collected, PipelineError> {
    let catalog = load_catalog(config)?;
    let db_root = required(&config.paths.db_root, "paths.db_root")?;
    let pack = match &config.paths.templates {
        Some(p) => input(TemplatePack::load(p))?,
        None => TemplatePack::builtin().clone(),
    };
    watch.lap("load");
    let mut c = Collected::default();
    c.count("databases", catalog.len());
    let mut input_index = 0;
    for (db_id, schema) in &catalog {
        let db = match Database::open_in(db_root, db_id) {
            Ok(db) => db,
            Err(e) => {
                c.count("missing_databases", 1);
                c.audit.push(AuditEvent::MissingDatabase {
                    db_id: db_id.clone(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let crafted = craft_and_fill_sql(schema, &pack.templates, client, &db, &config.paraphrase)?;
        let results: Vec<(
            CraftedQuery,
            Result<Vec<CandidateQuestion>, ParaphraseError>,
        )> = crafted
            .into_par_iter()
            .map(|mut q| {
                let r = if q.is_ok() {
                    describe_and_paraphrase(
                        &mut q,
                        client,
                        config.options.paraphrases,
                        &config.paraphrase,
                    )
                } else {
                    Ok(vec![])
                };
                (q, r)
            })
            .collect();
        for (q, r) in results {
            c.count("crafted", 1);
            c.count("crafted_ok", usize::from(q.is_ok()));
            let (candidates, mut error) = match r {
                Ok(v) => (v, None),
                Err(e) if e.is_auth() => return Err(PipelineError::Auth(e.to_string())),
                Err(e) => (vec![], Some(e.to_string())),
            };
            let verdicts = if config.options.validate_crafted && !candidates.is_empty() {
                match validate_for(
                    client,
                    config,
                    &q.query,
                    candidates,
                    config.thresholds.lambda,
                )? {
                    Ok(v) => v,
                    Err(e) => {
                        error = Some(e);
                        vec![]
                    }
                }
            } else {
                candidates
                    .into_iter()
                    .map(|candidate| ValidationVerdict {
                        candidate,
                        similarity: None,
                        accepted: true,
                        rank: None,
                        error: None,
                    })
                    .collect()
            };
            c.count("candidates", verdicts.len());
            let accepted = accepted_in_rank_order(&verdicts);
            c.count("accepted", accepted.len());
            c.records.extend(
                accepted
                    .into_iter()
                    .map(|cand| AugmentationRecord::from_candidate(cand, run_id, input_index)),
            );
            input_index += 1;
            c.audit.push(AuditEvent::Crafted {
                crafted: q,
                verdicts,
                error,
            });
        }
    }
    watch.lap("generate");
    c.rate("accepted", "candidates");
    Ok(c)
}

fn run_perturb(
    config: &RunConfig,
    out_dir: &Path,
    watch: &mut Stopwatch,
) -> Result<Collected, PipelineError> {
    let catalog = load_catalog(config)?;
    let train = load_train(config)?;
    let db_root = required(&config.paths.db_root, "paths.db_root")?;
    let split = if config.options.per_category {
        Some(input(CategorySplit::load(required(
            &config.paths.categories,
            "paths.categories",
        )?))?)
    } else {
        None
    };
    watch.lap("load");
    let params = PerturbParams {
        fraction: config.thresholds.fraction,
        seed: config.seed.expect("validated"),
        per_category: split.as_ref(),
        timeout: std::time::Duration::from_millis(config.paraphrase.timeout_ms),
    };
    let (perturbed, report) = input(replace_constants(&train, &catalog, db_root, &params))?;
    watch.lap("perturb");
    let corpus = out_dir.join("perturbed.json");
    write_examples(&corpus, &perturbed).map_err(io_err(&corpus))?;
    write_json(&out_dir.join("perturbation_report.json"), &report)?;

    let mut c = Collected::default();
    c.count("total", report.total);
    c.count("selected", report.selected);
    c.count("altered", report.altered);
    for e in &report.entries {
        let key = serde_json::to_value(e.status).expect("serializes");
        c.count(&format!("status_{}", key.as_str().unwrap_or("other")), 1);
    }
    c.audit = report
        .entries
        .into_iter()
        .map(AuditEvent::Perturbation)
        .collect();
    Ok(c)
}

fn run_evaluate(
    config: &RunConfig,
    out_dir: &Path,
    watch: &mut Stopwatch,
) -> Result<Collected, PipelineError> {
    let records = read_dataset(required(&config.paths.dataset, "paths.dataset")?)?;
    let gold = input(load_examples(required(&config.paths.gold, "paths.gold")?))?;
    watch.lap("load");
    let generated: BTreeMap<(&str, &str), ()> = records
        .iter()
        .map(|r| ((r.db_id.as_str(), r.query.as_str()), ()))
        .collect();
    let sets = group_sets(
        gold.iter()
            .filter(|g| generated.contains_key(&(g.db_id.as_str(), g.query.as_str())))
            .map(|g| (g.db_id.as_str(), g.query.as_str(), g.question.as_str())),
        records
            .iter()
            .map(|r| (r.db_id.as_str(), r.query.as_str(), r.question.as_str())),
    );
    let report = quality_report(&sets, config.smoothing);
    watch.lap("score");
    write_json(&out_dir.join("quality.json"), &report)?;
    let table = out_dir.join("quality.txt");
    std::fs::write(&table, report.to_table()).map_err(io_err(&table))?;

    let mut c = Collected::default();
    c.count("records", records.len());
    c.count("query_sets", sets.len());
    c.count(
        "sets_with_gold",
        report.sets.iter().filter(|s| s.best_bleu.is_some()).count(),
    );
    for (k, v) in [
        ("mean_best_bleu", report.mean_best_bleu),
        ("mean_self_bleu", report.mean_self_bleu),
        ("diversity", report.diversity),
        ("gold_self_bleu", report.gold_self_bleu),
    ] {
        if let Some(v) = v {
            c.scores.insert(k.to_string(), v);
        }
    }
    Ok(c)
}

/// Copies `<db_id>.sql` scripts under `scripts` into SQLite files laid out
/// as the pipeline expects. Used to materialize fixture databases.
pub fn materialize_databases(scripts: &Path, db_root: &Path) -> Result<Vec<String>, PipelineError> {
    let mut built = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(scripts)
        .map_err(io_err(scripts))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "sql"))
        .collect();
    entries.sort();
    for path in entries {
        let db_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let script = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        Database::create_from_script(&script, crate::ingest::database_path(db_root, &db_id))
            .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
        built.push(db_id);
    }
    Ok(built)
}
