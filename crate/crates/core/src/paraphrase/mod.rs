//! Paraphrase-based strategies: rewriting a question with schema context, and
//! synthesizing queries from SQL templates then describing and rewording them.

mod templates;

use std::collections::BTreeMap;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use templates::{HoleKind, SqlTemplate, TemplatePack, Tier};

use crate::db::Database;
use crate::generate::{first_sentence, CandidateQuestion, Provenance};
use crate::ingest::{DatabaseSchema, ExamplePair, SchemaCatalog};
use crate::llm::{render_prompt, ChatRequest, LlmClient, LlmError, TemplateId};
use crate::sql::parse_sql;

#[derive(Debug, thiserror::Error)]
pub enum ParaphraseError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("unknown db_id `{0}`")]
    UnknownDb(String),
    #[error("crafted query did not execute cleanly")]
    NotExecutable,
    #[error("provider returned an empty description")]
    EmptyDescription,
}

impl ParaphraseError {
    pub fn is_auth(&self) -> bool {
        matches!(self, ParaphraseError::Llm(e) if e.is_auth())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParaphraseSettings {
    pub extract_temperature: f64,
    pub paraphrase_temperature: f64,
    pub fill_temperature: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    /// Also reject crafted queries whose result set is empty.
    pub drop_empty_results: bool,
}

impl Default for ParaphraseSettings {
    fn default() -> Self {
        Self {
            extract_temperature: 0.0,
            paraphrase_temperature: 0.7,
            fill_temperature: 0.0,
            max_tokens: 512,
            timeout_ms: 5000,
            drop_empty_results: false,
        }
    }
}

fn chat(
    client: &LlmClient,
    id: TemplateId,
    bindings: BTreeMap<String, String>,
    temperature: f64,
    max_tokens: u32,
) -> Result<String, LlmError> {
    let mut request = ChatRequest::new(render_prompt(id, bindings)?, temperature, 0);
    request.max_tokens = max_tokens;
    Ok(client.chat(&request)?.text)
}

fn bind<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Items from a numbered or bulleted list reply, markers removed.
pub fn parse_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| {
            let l = l.trim();
            let digits = l.len() - l.trim_start_matches(|c: char| c.is_ascii_digit()).len();
            let l = if digits > 0 {
                l[digits..].trim_start_matches(['.', ')', ':'])
            } else {
                l.trim_start_matches(['-', '*', '•'])
            };
            l.trim().to_string()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

/// Outcome of rewriting one training question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaParaphrase {
    pub tables: Vec<String>,
    /// Extracted names that are not tables of the schema.
    pub dropped: Vec<String>,
    /// Nothing valid was extracted, so every table was used.
    pub fell_back: bool,
    pub candidates: Vec<CandidateQuestion>,
}

/// Picks the tables relevant to the question, then asks for `n` rewrites of
/// it given those tables and their columns.
pub fn paraphrase_with_schema(
    example: &ExamplePair,
    catalog: &SchemaCatalog,
    client: &LlmClient,
    n: usize,
    settings: &ParaphraseSettings,
) -> Result<SchemaParaphrase, ParaphraseError> {
    let schema = catalog
        .get(&example.db_id)
        .ok_or_else(|| ParaphraseError::UnknownDb(example.db_id.clone()))?;
    let reply = chat(
        client,
        TemplateId::ExtractTables,
        bind([
            ("schema", schema.render()),
            ("question", example.question.clone()),
        ]),
        settings.extract_temperature,
        settings.max_tokens,
    )?;
    let (mut tables, mut dropped) = (Vec::new(), Vec::new());
    for name in reply
        .split([',', '\n'])
        .map(|s| s.trim().trim_matches(['`', '"', '\'']))
        .filter(|s| !s.is_empty())
    {
        match schema.table_names().find(|t| t.eq_ignore_ascii_case(name)) {
            Some(t) if !tables.iter().any(|x| x == t) => tables.push(t.to_string()),
            Some(_) => {}
            None => dropped.push(name.to_string()),
        }
    }
    if !dropped.is_empty() {
        log::info!("{}: dropped unknown tables {dropped:?}", example.db_id);
    }
    let fell_back = tables.is_empty();
    if fell_back {
        log::info!(
            "{}: no valid table extracted for {:?}, using all",
            example.db_id,
            example.question
        );
        tables = schema.table_names().map(str::to_string).collect();
    }
    let candidates = if n == 0 {
        vec![]
    } else {
        let columns: Vec<String> = tables
            .iter()
            .filter_map(|t| schema.table(t))
            .flat_map(|t| {
                t.columns
                    .iter()
                    .map(move |c| format!("{}.{}", t.name, c.name))
            })
            .collect();
        let reply = chat(
            client,
            TemplateId::ParaphraseWithSchema,
            bind([
                ("n", n.to_string()),
                ("tables", tables.join(", ")),
                ("columns", columns.join(", ")),
                ("question", example.question.clone()),
            ]),
            settings.paraphrase_temperature,
            settings.max_tokens,
        )?;
        parse_list(&reply)
            .into_iter()
            .take(n)
            .map(|q| {
                CandidateQuestion::new(
                    q,
                    example.query.clone(),
                    example.db_id.clone(),
                    Provenance::ParaphraseSchema,
                )
            })
            .collect()
    };
    Ok(SchemaParaphrase {
        tables,
        dropped,
        fell_back,
        candidates,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CraftStatus {
    Ok,
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CraftedQuery {
    pub query: String,
    pub template_id: String,
    pub db_id: String,
    #[serde(flatten)]
    pub status: CraftStatus,
    /// Result rows, when it ran.
    pub rows: Option<usize>,
    pub description: Option<String>,
}

impl CraftedQuery {
    pub fn is_ok(&self) -> bool {
        self.status == CraftStatus::Ok
    }
}

/// Takes the SQL out of a reply, dropping code fences and a trailing `;`.
pub fn extract_sql(reply: &str) -> String {
    let lines: Vec<&str> = reply
        .lines()
        .map(str::trim)
        .filter(|l| !l.starts_with("```") && !l.is_empty())
        .collect();
    lines.join(" ").trim_end_matches(';').trim().to_string()
}

/// Has the provider fill each template for this schema, then keeps a fill
/// only if it resolves against the schema and runs on the database. Every
/// template yields one record; failures carry an error status.
pub fn craft_and_fill_sql(
    schema: &DatabaseSchema,
    templates: &[SqlTemplate],
    client: &LlmClient,
    db: &Database,
    settings: &ParaphraseSettings,
) -> Result<Vec<CraftedQuery>, LlmError> {
    let rendered = schema.render();
    let fills: Vec<String> = templates
        .par_iter()
        .map(|t| {
            let reply = chat(
                client,
                TemplateId::FillSqlTemplate,
                bind([
                    ("schema", rendered.clone()),
                    ("holes", t.hole_lines()),
                    ("template", t.bracketed()),
                ]),
                settings.fill_temperature,
                settings.max_tokens,
            )?;
            Ok(extract_sql(&reply))
        })
        .collect::<Result<_, LlmError>>()?;
    // One connection, used from this thread only.
    let timeout = Duration::from_millis(settings.timeout_ms);
    Ok(templates
        .iter()
        .zip(fills)
        .map(|(t, query)| {
            let (status, rows) = match parse_sql(&query, schema) {
                Err(e) => (
                    CraftStatus::Error {
                        message: format!("parse: {e}"),
                    },
                    None,
                ),
                Ok(_) => match db.execute(&query, timeout) {
                    Err(e) => (
                        CraftStatus::Error {
                            message: e.to_string(),
                        },
                        None,
                    ),
                    Ok(out) if out.rows == 0 && settings.drop_empty_results => (
                        CraftStatus::Error {
                            message: "empty result set".into(),
                        },
                        Some(0),
                    ),
                    Ok(out) => (CraftStatus::Ok, Some(out.rows)),
                },
            };
            CraftedQuery {
                query,
                template_id: t.id.clone(),
                db_id: schema.db_id.clone(),
                status,
                rows,
                description: None,
            }
        })
        .collect())
}

/// Describes a crafted query in one sentence, then asks for `n` questions
/// that rephrase the description.
pub fn describe_and_paraphrase(
    crafted: &mut CraftedQuery,
    client: &LlmClient,
    n: usize,
    settings: &ParaphraseSettings,
) -> Result<Vec<CandidateQuestion>, ParaphraseError> {
    if !crafted.is_ok() {
        return Err(ParaphraseError::NotExecutable);
    }
    if n == 0 {
        return Ok(vec![]);
    }
    let description = first_sentence(&chat(
        client,
        TemplateId::DescribeQuery,
        bind([("query", crafted.query.clone())]),
        settings.paraphrase_temperature,
        settings.max_tokens,
    )?);
    if description.is_empty() {
        return Err(ParaphraseError::EmptyDescription);
    }
    crafted.description = Some(description.clone());
    let reply = chat(
        client,
        TemplateId::ParaphraseDescription,
        bind([("n", n.to_string()), ("description", description.clone())]),
        settings.paraphrase_temperature,
        settings.max_tokens,
    )?;
    Ok(parse_list(&reply)
        .into_iter()
        .take(n)
        .map(|q| {
            let mut c = CandidateQuestion::new(
                q,
                crafted.query.clone(),
                crafted.db_id.clone(),
                Provenance::ParaphraseCrafted,
            );
            c.template = Some(crafted.template_id.clone());
            c.explanation = Some(description.clone());
            c
        })
        .collect())
}
