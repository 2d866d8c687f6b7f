//! Fixture loading and independent oracles shared by the integration tests.

#![allow(dead_code)]

pub mod oracles;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use qsynth_core::config::{RunConfig, Strategy};
use qsynth_core::ingest::{load_examples, load_schemas, ExamplePair, SchemaCatalog};
use qsynth_core::llm::stub::{StubFaults, StubProvider};
use qsynth_core::llm::LlmClient;
use qsynth_core::pipeline::materialize_databases;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn catalog() -> SchemaCatalog {
    load_schemas(fixture("tables.json")).expect("fixture schemas")
}

pub fn examples(name: &str) -> Vec<ExamplePair> {
    load_examples(fixture(name)).expect("fixture examples")
}

/// Builds the fixture SQLite databases under a fresh temporary root.
pub fn databases() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    materialize_databases(&fixture("sql"), dir.path()).expect("fixture databases");
    dir
}

pub fn stub_client(faults: StubFaults) -> LlmClient {
    LlmClient::new(Arc::new(StubProvider::with_faults(faults)))
}

/// Stub reformer run over the fixture corpus, writing under `root`.
pub fn reformer_config(root: &Path) -> RunConfig {
    let mut c = RunConfig {
        strategy: Strategy::Reformer,
        seed: Some(42),
        ..Default::default()
    };
    c.paths.train = Some(fixture("train.json"));
    c.paths.schemas = Some(fixture("tables.json"));
    c.paths.new_queries = Some(fixture("new_queries.json"));
    c.paths.output_dir = Some(root.join("out"));
    c.paths.cache_dir = Some(root.join("cache"));
    c
}

/// Prints one verdict line past the test harness's output capture, then
/// fails the test if the criterion did not hold.
pub fn report(criterion: &str, outcome: Result<String, String>) {
    let line = match &outcome {
        Ok(detail) => format!("PASS  {criterion:<28} {detail}"),
        Err(why) => format!("FAIL  {criterion:<28} {why}"),
    };
    let _ = writeln!(std::io::stderr().lock(), "{line}");
    if let Err(why) = outcome {
        panic!("{criterion}: {why}");
    }
}

/// `Err` with `msg` unless `cond` holds.
pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}
