//! Acceptance suite. Each test checks one criterion and prints a PASS or
//! FAIL line with the measured values.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use common::oracles::{brute_ted, naive_bleu, random_tree};
use common::{catalog, databases, ensure, examples, fixture, reformer_config, report, stub_client};
use qsynth_core::config::RunConfig;
use qsynth_core::db::Database;
use qsynth_core::generate::{CandidateQuestion, Explanation, ExplanationRole, Provenance};
use qsynth_core::ingest::{DatabaseSchema, ExamplePair, SchemaCatalog};
use qsynth_core::llm::stub::StubFaults;
use qsynth_core::llm::{ChatRequest, Completion, LlmClient, Provider, ProviderError};
use qsynth_core::metrics::{bleu, self_bleu, Smoothing};
use qsynth_core::paraphrase::{craft_and_fill_sql, CraftStatus, ParaphraseSettings, TemplatePack};
use qsynth_core::perturb::{replace_constants, PerturbParams, PerturbStatus};
use qsynth_core::pipeline::{
    run_pipeline, AUDIT_FILE, DATASET_FILE, SUMMARY_FILE, SUMMARY_TEXT_FILE,
};
use qsynth_core::retrieval::{
    get_related_queries, normalized_distance, RetrievalIndex, RetrievalParams,
};
use qsynth_core::sql::{anonymize, parse_sql, AlgebraTree, Label};
use qsynth_core::templating::{build_common_vocabulary, mask_schema_tokens, TemplateToken};
use qsynth_core::tree::Node;
use qsynth_core::{seeding, ted};
use serde::Deserialize;

const SIMILARITY_TOL: f64 = 1e-9;
const BLEU_TOL: f64 = 1e-6;

#[test]
fn ted_matches_brute_force_oracle() {
    const PAIRS: u64 = 300;
    let start = Instant::now();
    let outcome = (|| {
        let mut max_seen = 0;
        for i in 0..PAIRS {
            let mut rng = seeding::stream(7, "acceptance-ted", i);
            let a = random_tree(&mut rng, 8, 6);
            let b = random_tree(&mut rng, 8, 6);
            let (got, want) = (ted::tree_edit_distance(&a, &b), brute_ted(&a, &b));
            ensure(got == want, || {
                format!("pair {i}: {got} != oracle {want} for {a:?} / {b:?}")
            })?;
            max_seen = max_seen.max(want);
        }
        let elapsed = start.elapsed();
        ensure(elapsed < Duration::from_secs(60), || {
            format!("took {elapsed:?}")
        })?;
        Ok(format!(
            "{PAIRS} pairs equal, max distance {max_seen}, {:.2}s",
            elapsed.as_secs_f64()
        ))
    })();
    report("ted oracle", outcome);
}

fn anon(label: Label) -> Node<Label> {
    Node::leaf(label)
}

#[test]
fn retrieval_defaults() {
    let outcome = (|| {
        let params = RetrievalParams::default();
        ensure(params.threshold == 0.1, || {
            format!("threshold {}", params.threshold)
        })?;

        // Five nodes each, one relabel apart: exactly 1 / (5 + 5) = 0.1.
        let query = AlgebraTree::new(Node::new(
            Label::Project,
            vec![
                anon(Label::AnonColumn),
                anon(Label::AnonColumn),
                anon(Label::AnonColumn),
                anon(Label::AnonTable),
            ],
        ));
        let near = AlgebraTree::new(Node::new(
            Label::Project,
            vec![
                anon(Label::AnonColumn),
                anon(Label::AnonColumn),
                anon(Label::Distinct),
                anon(Label::AnonTable),
            ],
        ));
        let d = normalized_distance(&query, &near, params.normalizer);
        ensure(d == 0.1, || format!("boundary pair distance {d}"))?;
        let mut index = RetrievalIndex::default();
        index.push(0, ExamplePair::new("q", "SELECT 1", "db"), &near);
        let at_default = get_related_queries(&query, &index, &params, None).len();
        ensure(at_default == 0, || {
            "distance exactly 0.1 was retrieved".into()
        })?;
        let looser = RetrievalParams {
            threshold: 0.1 + 1e-12,
            ..params
        };
        ensure(
            get_related_queries(&query, &index, &looser, None).len() == 1,
            || "pair just under the threshold was missed".into(),
        )?;

        let index = RetrievalIndex::build(&examples("train.json"), &catalog());
        for e in index.entries() {
            let d = normalized_distance(&e.tree, &e.tree, params.normalizer);
            ensure(d == 0.0, || {
                format!("self-distance {d} for {}", e.pair.query)
            })?;
        }

        let thresholds = [0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 1.01];
        let mut checked = 0;
        for e in index.entries() {
            let mut previous: BTreeSet<usize> = BTreeSet::new();
            for &t in &thresholds {
                let p = RetrievalParams {
                    threshold: t,
                    max_hits: usize::MAX,
                    ..params
                };
                let hits: BTreeSet<usize> = get_related_queries(&e.tree, &index, &p, None)
                    .iter()
                    .map(|h| h.example_id)
                    .collect();
                ensure(previous.is_subset(&hits), || {
                    format!("hits shrank at threshold {t} for {}", e.pair.query)
                })?;
                if t > 0.0 {
                    ensure(hits.contains(&e.example_id), || {
                        format!("{} missing itself", e.pair.query)
                    })?;
                }
                previous = hits;
                checked += 1;
            }
            ensure(previous.len() == index.len(), || {
                "threshold above 1 did not return everything".into()
            })?;
        }
        Ok(format!(
            "strict < 0.1, self-distance 0 on {} entries, {checked} monotone steps",
            index.len()
        ))
    })();
    report("retrieval defaults", outcome);
}

fn schema(db_id: &str) -> DatabaseSchema {
    DatabaseSchema {
        db_id: db_id.into(),
        tables: vec![],
        primary_keys: vec![],
        foreign_keys: vec![],
    }
}

#[test]
fn masking_fixture() {
    // Words in at least two of the three schemas (fraction 2/3 > 0.5):
    // how many are in the what is of name. Everything else is masked.
    let corpus = [
        (
            "zoo",
            "How many animals are in the zoo ?",
            "How many MASK are in the MASK ?",
        ),
        (
            "zoo",
            "What is the name of the oldest keeper ?",
            "What is the name of the MASK ?",
        ),
        (
            "shop",
            "How many products are in stock ?",
            "How many MASK are in MASK ?",
        ),
        (
            "shop",
            "What is the price of the cheapest product ?",
            "What is the MASK of the MASK ?",
        ),
        (
            "school",
            "What is the name of the school with 300 students ?",
            "What is the name of the MASK ?",
        ),
        (
            "school",
            "List the teachers of each class .",
            "MASK the MASK of MASK .",
        ),
    ];
    let outcome = (|| {
        let catalog: SchemaCatalog = ["zoo", "shop", "school"]
            .iter()
            .map(|d| (d.to_string(), schema(d)))
            .collect();
        let pairs: Vec<ExamplePair> = corpus
            .iter()
            .map(|(db, q, _)| ExamplePair::new(*q, "SELECT 1", *db))
            .collect();
        let vocab = build_common_vocabulary(&pairs, &catalog, 0.5).map_err(|e| e.to_string())?;
        let common: BTreeSet<&str> = vocab
            .fractions
            .iter()
            .filter(|(w, _)| vocab.is_common(w))
            .map(|(w, _)| w.as_str())
            .collect();
        let want: BTreeSet<&str> = [
            "how", "many", "are", "in", "the", "what", "is", "of", "name",
        ]
        .into();
        ensure(common == want, || format!("common words {common:?}"))?;
        for (_, question, expected) in &corpus {
            let t = mask_schema_tokens(question, &vocab).map_err(|e| e.to_string())?;
            ensure(t.text() == *expected, || {
                format!("{question:?} -> {:?}, want {expected:?}", t.text())
            })?;
            let adjacent = t
                .tokens
                .windows(2)
                .any(|w| w[0] == TemplateToken::Mask && w[1] == TemplateToken::Mask);
            ensure(!adjacent, || format!("adjacent MASKs in {:?}", t.text()))?;
        }
        Ok(format!(
            "{} templates exact, no adjacent MASK",
            corpus.len()
        ))
    })();
    report("masking fixture", outcome);
}

#[derive(Deserialize)]
struct ValidatorCases {
    reference: String,
    lambda: f64,
    k: usize,
    candidates: Vec<ValidatorCase>,
}

#[derive(Deserialize)]
struct ValidatorCase {
    question: String,
    similarity: f64,
}

fn expl2(text: &str) -> Explanation {
    Explanation {
        text: text.into(),
        role: ExplanationRole::ForValidate,
        query: "SELECT Name FROM singer WHERE Age > 30".into(),
    }
}

fn candidates(questions: impl IntoIterator<Item = String>) -> Vec<CandidateQuestion> {
    questions
        .into_iter()
        .map(|q| {
            CandidateQuestion::new(
                q,
                "SELECT 1".into(),
                "concert_singer".into(),
                Provenance::Reformer,
            )
        })
        .collect()
}

#[test]
fn validator_threshold_and_cap() {
    let outcome = (|| {
        let text =
            std::fs::read_to_string(fixture("validator_cases.json")).map_err(|e| e.to_string())?;
        let cases: ValidatorCases = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let defaults = RunConfig::default().thresholds;
        ensure(
            cases.lambda == defaults.lambda && cases.k == defaults.top_k,
            || "fixture uses non-default λ or k".into(),
        )?;
        let client = stub_client(StubFaults::default());
        let verdicts = qsynth_core::validate::cycle_validate(
            candidates(cases.candidates.iter().map(|c| c.question.clone())),
            &expl2(&cases.reference),
            &client,
            cases.lambda,
            cases.k,
        )
        .map_err(|e| e.to_string())?;

        let mut worst = 0.0f64;
        for (v, c) in verdicts.iter().zip(&cases.candidates) {
            let s = v
                .similarity
                .ok_or_else(|| format!("{:?} unscored", c.question))?;
            worst = worst.max((s - c.similarity).abs());
            ensure((s - c.similarity).abs() <= SIMILARITY_TOL, || {
                format!("{:?}: {s} vs oracle {}", c.question, c.similarity)
            })?;
        }
        // Expected acceptance from the oracle values alone.
        let mut passing: Vec<usize> = (0..cases.candidates.len())
            .filter(|&i| cases.candidates[i].similarity >= cases.lambda)
            .collect();
        passing.sort_by(|&a, &b| {
            cases.candidates[b]
                .similarity
                .total_cmp(&cases.candidates[a].similarity)
        });
        ensure(passing.len() > cases.k, || {
            "fixture does not exercise the cap".into()
        })?;
        let want: BTreeSet<usize> = passing.iter().take(cases.k).copied().collect();
        let got: BTreeSet<usize> = (0..verdicts.len())
            .filter(|&i| verdicts[i].accepted)
            .collect();
        ensure(got == want, || {
            format!("accepted {got:?}, oracle says {want:?}")
        })?;
        for (rank, &i) in passing.iter().take(cases.k).enumerate() {
            ensure(verdicts[i].rank == Some(rank + 1), || {
                format!("candidate {i} rank {:?}", verdicts[i].rank)
            })?;
        }
        Ok(format!(
            "{} of {} above λ={}, {} accepted, max |Δsim| {worst:.1e}",
            passing.len(),
            verdicts.len(),
            cases.lambda,
            got.len()
        ))
    })();
    report("validator", outcome);
}

/// Embeddings unrelated to the stub's: word lengths and vowel counts.
struct ShapeProvider;

impl Provider for ShapeProvider {
    fn name(&self) -> &str {
        "shape"
    }
    fn model_id(&self) -> &str {
        "shape-chat"
    }
    fn embedding_model_id(&self) -> &str {
        "shape-embed"
    }
    fn embedding_dim(&self) -> usize {
        5
    }
    fn complete(&self, _: &ChatRequest) -> Result<Completion, ProviderError> {
        Err(ProviderError::Fatal("embeddings only".into()))
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let vowels = text.chars().filter(|c| "aeiouAEIOU".contains(*c)).count();
        Ok(vec![
            1.0 + words.len() as f64,
            text.len() as f64 / 3.0,
            vowels as f64,
            words.iter().map(|w| w.len()).max().unwrap_or(0) as f64,
            (text.len() % 7) as f64 - 3.0,
        ])
    }
}

#[test]
fn cycle_identity() {
    let texts = [
        "find the name of every singer whose age is greater than 30.",
        "list the number of rows of the pets table.",
        "x",
        "Show every country whose population exceeds 80000 , sorted by name .",
    ];
    let outcome = (|| {
        let clients = [
            ("stub", stub_client(StubFaults::default())),
            ("shape", LlmClient::new(std::sync::Arc::new(ShapeProvider))),
        ];
        let mut worst = 0.0f64;
        for (name, client) in &clients {
            for t in texts {
                let v = qsynth_core::validate::cycle_validate(
                    candidates([t.to_string()]),
                    &expl2(t),
                    client,
                    0.85,
                    5,
                )
                .map_err(|e| e.to_string())?;
                let s = v[0].similarity.ok_or("unscored")?;
                worst = worst.max((s - 1.0).abs());
                ensure((s - 1.0).abs() <= SIMILARITY_TOL && v[0].accepted, || {
                    format!("{name}: {t:?} scored {s}")
                })?;
            }
        }
        Ok(format!(
            "{} texts x 2 providers, max |1 - sim| {worst:.1e}",
            texts.len()
        ))
    })();
    report("cycle identity", outcome);
}

#[test]
fn bleu_anchors() {
    let outcome = (|| {
        let s = "what is the name of the oldest singer ?";
        let same = bleu(s, &[s], Smoothing::default()).map_err(|e| e.to_string())?;
        ensure((same - 100.0).abs() <= BLEU_TOL, || {
            format!("identical sentence {same}")
        })?;

        let (cand, reference) = ("the cat sat on the mat", "the cat is on the mat");
        let golden =
            bleu(cand, &[reference], Smoothing::AddOneOnZero).map_err(|e| e.to_string())?;
        let oracle = naive_bleu(cand, &[reference], true);
        ensure((golden - oracle).abs() <= BLEU_TOL, || {
            format!("golden pair {golden} vs oracle {oracle}")
        })?;

        let triplet = ["how many singers are there ?"; 3];
        let sb = self_bleu(&triplet, Smoothing::default()).map_err(|e| e.to_string())?;
        ensure((sb - 100.0).abs() <= BLEU_TOL, || {
            format!("self-BLEU of identical triplet {sb}")
        })?;
        Ok(format!(
            "identical {same:.6}, golden {golden:.6} = oracle {oracle:.6}, self-BLEU {sb:.6}"
        ))
    })();
    report("bleu", outcome);
}

#[test]
fn perturbation() {
    let outcome = (|| {
        let dbs = databases();
        let (pairs, catalog) = (examples("perturb.json"), catalog());
        let params = PerturbParams {
            fraction: 0.7,
            seed: 42,
            ..Default::default()
        };
        ensure(pairs.len() == 10, || {
            format!("fixture has {} queries", pairs.len())
        })?;
        let run =
            || replace_constants(&pairs, &catalog, dbs.path(), &params).map_err(|e| e.to_string());
        let (out, report) = run()?;
        ensure(report.selected == 7, || {
            format!("selected {}", report.selected)
        })?;
        for e in &report.entries {
            if e.status != PerturbStatus::Altered {
                continue;
            }
            let schema = &catalog[&e.db_id];
            let new = &out[e.index].query;
            ensure(new != &e.original, || {
                format!("query {} marked altered but unchanged", e.index)
            })?;
            let before = parse_sql(&e.original, schema).map_err(|x| x.to_string())?;
            let after = parse_sql(new, schema).map_err(|x| format!("{new}: {x}"))?;
            ensure(anonymize(&before) == anonymize(&after), || {
                format!("structure changed: {new}")
            })?;
            let db = Database::open_in(dbs.path(), &e.db_id).map_err(|x| x.to_string())?;
            db.execute(new, Duration::from_secs(5))
                .map_err(|x| format!("{new}: {x}"))?;
        }
        let unselected = (0..pairs.len()).filter(|i| !report.entries.iter().any(|e| e.index == *i));
        for i in unselected {
            ensure(out[i] == pairs[i], || {
                format!("unselected query {i} changed")
            })?;
        }
        let bytes = |o: &(Vec<ExamplePair>, _)| serde_json::to_vec(o).unwrap();
        let first = bytes(&(out, report.clone()));
        let second = run()?;
        ensure(first == bytes(&second), || "second run differs".into())?;
        Ok(format!(
            "{}/{} selected, {} altered, all parse and run, trees unchanged, runs identical",
            report.selected, report.total, report.altered
        ))
    })();
    report("perturbation", outcome);
}

#[test]
fn crafted_sql_executes() {
    let outcome = (|| {
        let dbs = databases();
        let catalog = catalog();
        let pack = TemplatePack::builtin();
        let settings = ParaphraseSettings::default();
        let timeout = Duration::from_millis(settings.timeout_ms);
        let (mut ok, mut total, mut forced) = (0, 0, 0);
        for (db_id, schema) in &catalog {
            let db = Database::open_in(dbs.path(), db_id).map_err(|e| e.to_string())?;
            let crafted = craft_and_fill_sql(
                schema,
                &pack.templates,
                &stub_client(StubFaults::default()),
                &db,
                &settings,
            )
            .map_err(|e| e.to_string())?;
            for c in &crafted {
                total += 1;
                if c.is_ok() {
                    ok += 1;
                    db.execute(&c.query, timeout)
                        .map_err(|e| format!("{db_id}: {}: {e}", c.query))?;
                }
            }
            let broken = craft_and_fill_sql(
                schema,
                &pack.templates,
                &stub_client(StubFaults {
                    bad_column: true,
                    ..Default::default()
                }),
                &db,
                &settings,
            )
            .map_err(|e| e.to_string())?;
            for c in broken.iter().filter(|c| c.query.contains("no_such_column")) {
                forced += 1;
                ensure(
                    matches!(&c.status, CraftStatus::Error { message } if !message.is_empty()),
                    || format!("{db_id}: forced-invalid fill kept: {}", c.query),
                )?;
            }
        }
        ensure(ok > 0, || "no crafted query succeeded".into())?;
        ensure(forced > 0, || "no fill was forced invalid".into())?;
        Ok(format!(
            "{ok}/{total} ok fills all execute, {forced} forced-invalid fills rejected"
        ))
    })();
    report("crafted sql", outcome);
}

#[test]
fn end_to_end_determinism() {
    let start = Instant::now();
    let outcome = (|| {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let out_a = run_pipeline(&reformer_config(a.path())).map_err(|e| e.to_string())?;
        let out_b = run_pipeline(&reformer_config(b.path())).map_err(|e| e.to_string())?;
        for file in [DATASET_FILE, AUDIT_FILE, SUMMARY_FILE, SUMMARY_TEXT_FILE] {
            let x =
                std::fs::read(out_a.output_dir.join(file)).map_err(|e| format!("{file}: {e}"))?;
            let y =
                std::fs::read(out_b.output_dir.join(file)).map_err(|e| format!("{file}: {e}"))?;
            ensure(x == y, || format!("{file} differs between runs"))?;
        }
        let records = std::fs::read_to_string(out_a.output_dir.join(DATASET_FILE))
            .unwrap()
            .lines()
            .count();
        ensure(records > 0, || "empty dataset".into())?;
        let elapsed = start.elapsed();
        ensure(elapsed < Duration::from_secs(120), || {
            format!("took {elapsed:?}")
        })?;
        Ok(format!(
            "{records} records, byte-identical across runs, {:.2}s",
            elapsed.as_secs_f64()
        ))
    })();
    report("end-to-end determinism", outcome);
}

#[test]
fn config_defaults() {
    let outcome = (|| {
        let t = RunConfig::default().thresholds;
        let checks = [
            ("ted", t.ted, 0.1),
            ("lambda", t.lambda, 0.85),
            ("top_k", t.top_k as f64, 5.0),
            ("keep", t.keep, 0.5),
            ("fraction", t.fraction, 0.7),
        ];
        for (name, got, want) in checks {
            ensure(got == want, || format!("{name} = {got}, want {want}"))?;
        }
        let reparsed =
            RunConfig::from_toml(&RunConfig::default().to_toml()).map_err(|e| e.to_string())?;
        ensure(reparsed.thresholds == t, || {
            "defaults do not survive a TOML round trip".into()
        })?;
        Ok("ted 0.1, λ 0.85, top-k 5, keep 0.5, fraction 0.7".into())
    })();
    report("config defaults", outcome);
}
