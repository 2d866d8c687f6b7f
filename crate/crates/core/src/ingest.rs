//! Spider-format corpus loading: examples, the tables catalog, and
//! category splits.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::sql;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: expected a top-level array")]
    NotAnArray { path: PathBuf },
    #[error("record {index}: field `{field}` {problem}")]
    Record {
        index: usize,
        field: &'static str,
        problem: String,
    },
    #[error("database `{db_id}`: column index {index} out of range ({context})")]
    DanglingColumn {
        db_id: String,
        index: usize,
        context: &'static str,
    },
    #[error("duplicate db_id `{0}` in schema catalog")]
    DuplicateDb(String),
    #[error("database `{db_id}`: duplicate table name `{table}`")]
    DuplicateTable { db_id: String, table: String },
    #[error("category split {path}: {message}")]
    Split { path: PathBuf, message: String },
}

/// One (question, SQL query, database) record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExamplePair {
    pub question: String,
    pub query: String,
    pub db_id: String,
}

impl ExamplePair {
    pub fn new(
        question: impl Into<String>,
        query: impl Into<String>,
        db_id: impl Into<String>,
    ) -> Self {
        Self {
            question: question.into(),
            query: query.into(),
            db_id: db_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnKey {
    pub table: String,
    pub column: String,
}

impl std::fmt::Display for ColumnKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub ty: String,
}

impl Column {
    pub fn is_numeric(&self) -> bool {
        self.ty.eq_ignore_ascii_case("number")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub db_id: String,
    pub tables: Vec<Table>,
    pub primary_keys: Vec<ColumnKey>,
    pub foreign_keys: Vec<(ColumnKey, ColumnKey)>,
}

impl DatabaseSchema {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables
            .iter()
            .find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.iter().map(|t| t.name.as_str())
    }

    /// Compact one-line-per-table rendering used in prompts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for t in &self.tables {
            let cols: Vec<String> = t
                .columns
                .iter()
                .map(|c| format!("{} {}", c.name, c.ty))
                .collect();
            out.push_str(&format!("{}({})\n", t.name, cols.join(", ")));
        }
        for (from, to) in &self.foreign_keys {
            out.push_str(&format!("foreign key: {from} = {to}\n"));
        }
        out.trim_end().to_string()
    }
}

pub type SchemaCatalog = BTreeMap<String, DatabaseSchema>;

fn read_json(path: &Path) -> Result<Value, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| IngestError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn string_field(record: &Value, index: usize, field: &'static str) -> Result<String, IngestError> {
    match record.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(IngestError::Record {
            index,
            field,
            problem: format!("must be a string, found {}", json_kind(other)),
        }),
        None => Err(IngestError::Record {
            index,
            field,
            problem: "is missing".into(),
        }),
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Loads a Spider-style examples file. `query_toks` and other extra fields
/// are ignored; the raw `query` string is authoritative.
pub fn load_examples(path: impl AsRef<Path>) -> Result<Vec<ExamplePair>, IngestError> {
    let path = path.as_ref();
    let Value::Array(records) = read_json(path)? else {
        return Err(IngestError::NotAnArray {
            path: path.to_path_buf(),
        });
    };
    records
        .iter()
        .enumerate()
        .map(|(index, record)| {
            if !record.is_object() {
                return Err(IngestError::Record {
                    index,
                    field: "<record>",
                    problem: format!("must be an object, found {}", json_kind(record)),
                });
            }
            let question = string_field(record, index, "question")?;
            if question.trim().is_empty() {
                return Err(IngestError::Record {
                    index,
                    field: "question",
                    problem: "is empty".into(),
                });
            }
            Ok(ExamplePair {
                question,
                query: string_field(record, index, "query")?,
                db_id: string_field(record, index, "db_id")?,
            })
        })
        .collect()
}

pub fn write_examples(path: impl AsRef<Path>, examples: &[ExamplePair]) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(examples).map_err(std::io::Error::other)?;
    fs::write(path, text + "\n")
}

#[derive(Deserialize)]
struct RawSchema {
    db_id: String,
    table_names_original: Vec<String>,
    column_names_original: Vec<(i64, String)>,
    column_types: Vec<String>,
    #[serde(default)]
    primary_keys: Vec<KeyIndex>,
    #[serde(default)]
    foreign_keys: Vec<(usize, usize)>,
}

/// Newer Spider releases store composite primary keys as nested arrays.
#[derive(Deserialize)]
#[serde(untagged)]
enum KeyIndex {
    Single(usize),
    Composite(Vec<usize>),
}

/// Loads a Spider `tables.json` catalog, resolving index-based key
/// references into named `table.column` pairs.
pub fn load_schemas(path: impl AsRef<Path>) -> Result<SchemaCatalog, IngestError> {
    let path = path.as_ref();
    let value = read_json(path)?;
    let raws: Vec<RawSchema> =
        serde_json::from_value(value).map_err(|source| IngestError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    let mut catalog = SchemaCatalog::new();
    for raw in raws {
        let schema = resolve_schema(raw)?;
        if catalog.contains_key(&schema.db_id) {
            return Err(IngestError::DuplicateDb(schema.db_id));
        }
        catalog.insert(schema.db_id.clone(), schema);
    }
    Ok(catalog)
}

fn resolve_schema(raw: RawSchema) -> Result<DatabaseSchema, IngestError> {
    let db_id = raw.db_id;
    let mut seen = HashSet::new();
    for name in &raw.table_names_original {
        if !seen.insert(name.to_lowercase()) {
            return Err(IngestError::DuplicateTable {
                db_id: db_id.clone(),
                table: name.clone(),
            });
        }
    }
    let mut tables: Vec<Table> = raw
        .table_names_original
        .iter()
        .map(|name| Table {
            name: name.clone(),
            columns: Vec::new(),
        })
        .collect();
    // Column 0 is the `*` pseudo-column with table index -1.
    let mut keys: Vec<Option<ColumnKey>> = Vec::with_capacity(raw.column_names_original.len());
    for (index, (table_index, name)) in raw.column_names_original.iter().enumerate() {
        if *table_index < 0 {
            keys.push(None);
            continue;
        }
        let table =
            tables
                .get_mut(*table_index as usize)
                .ok_or_else(|| IngestError::DanglingColumn {
                    db_id: db_id.clone(),
                    index,
                    context: "column table index",
                })?;
        let ty = raw
            .column_types
            .get(index)
            .cloned()
            .unwrap_or_else(|| "text".into());
        table.columns.push(Column {
            name: name.clone(),
            ty,
        });
        keys.push(Some(ColumnKey {
            table: table.name.clone(),
            column: name.clone(),
        }));
    }
    let lookup = |index: usize, context: &'static str| -> Result<ColumnKey, IngestError> {
        keys.get(index)
            .cloned()
            .flatten()
            .ok_or_else(|| IngestError::DanglingColumn {
                db_id: db_id.clone(),
                index,
                context,
            })
    };
    let mut primary_keys = Vec::new();
    for pk in &raw.primary_keys {
        match pk {
            KeyIndex::Single(i) => primary_keys.push(lookup(*i, "primary key")?),
            KeyIndex::Composite(is) => {
                for i in is {
                    primary_keys.push(lookup(*i, "primary key")?);
                }
            }
        }
    }
    let foreign_keys = raw
        .foreign_keys
        .iter()
        .map(|&(a, b)| Ok((lookup(a, "foreign key")?, lookup(b, "foreign key")?)))
        .collect::<Result<Vec<_>, IngestError>>()?;
    Ok(DatabaseSchema {
        db_id,
        tables,
        primary_keys,
        foreign_keys,
    })
}

/// Mapping from db_id to a free-form category label. Databases without a
/// label fall into [`CategorySplit::REMAINDER`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategorySplit {
    pub labels: BTreeMap<String, String>,
}

impl CategorySplit {
    pub const REMAINDER: &'static str = "train";

    pub fn category_of(&self, db_id: &str) -> &str {
        self.labels
            .get(db_id)
            .map(String::as_str)
            .unwrap_or(Self::REMAINDER)
    }

    /// Reads a flat `db_id = "label"` map from TOML, or a JSON object when
    /// the file extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let split = |message: String| IngestError::Split {
            path: path.to_path_buf(),
            message,
        };
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| split(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| split(e.to_string()))
        }
    }
}

pub fn split_by_category(
    examples: &[ExamplePair],
    split: &CategorySplit,
) -> BTreeMap<String, Vec<ExamplePair>> {
    let mut buckets: BTreeMap<String, Vec<ExamplePair>> = BTreeMap::new();
    buckets
        .entry(CategorySplit::REMAINDER.to_string())
        .or_default();
    for ex in examples {
        buckets
            .entry(split.category_of(&ex.db_id).to_string())
            .or_default()
            .push(ex.clone());
    }
    buckets
}

/// A record set aside because it failed a lazy validity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quarantined {
    pub index: usize,
    pub example: ExamplePair,
    pub reason: String,
}

/// Splits examples into those whose SQL parses against their schema and
/// those that do not (unknown db_id included).
pub fn partition_parseable(
    examples: &[ExamplePair],
    catalog: &SchemaCatalog,
) -> (
    Vec<(usize, ExamplePair, sql::AlgebraTree)>,
    Vec<Quarantined>,
) {
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (index, ex) in examples.iter().enumerate() {
        let Some(schema) = catalog.get(&ex.db_id) else {
            bad.push(Quarantined {
                index,
                example: ex.clone(),
                reason: format!("unknown db_id `{}`", ex.db_id),
            });
            continue;
        };
        match sql::parse_sql(&ex.query, schema) {
            Ok(tree) => ok.push((index, ex.clone(), tree)),
            Err(e) => bad.push(Quarantined {
                index,
                example: ex.clone(),
                reason: e.to_string(),
            }),
        }
    }
    (ok, bad)
}

/// Path of the SQLite file for `db_id` under the Spider database layout.
pub fn database_path(root: impl AsRef<Path>, db_id: &str) -> PathBuf {
    root.as_ref().join(db_id).join(format!("{db_id}.sqlite"))
}
