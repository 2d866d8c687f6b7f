//! Read-only access to per-database SQLite files.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rusqlite::{types::ValueRef, Connection, OpenFlags};

use crate::ingest::ColumnKey;
use crate::sql::{Literal, LiteralKind};

#[derive(Debug, thiserror::Error)]
pub enum DbError {
    #[error("database file not found: {0}")]
    Missing(PathBuf),
    #[error("cannot open {path}: {message}")]
    Open { path: PathBuf, message: String },
    #[error("{0}")]
    Execution(String),
    #[error("execution timed out after {0:?}")]
    Timeout(Duration),
}

/// A scalar value read from a column.
#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Integer(i64),
    Real(f64),
    Text(String),
}

impl CellValue {
    /// Converts to a literal of the requested kind, if the value fits it.
    pub fn to_literal(&self, kind: LiteralKind) -> Option<Literal> {
        let text = match (self, kind) {
            (CellValue::Integer(i), LiteralKind::Num) => i.to_string(),
            (CellValue::Real(f), LiteralKind::Num) => {
                if !f.is_finite() {
                    return None;
                }
                f.to_string()
            }
            (CellValue::Text(s), LiteralKind::Num) => {
                let t = s.trim();
                t.parse::<f64>().ok().filter(|f| f.is_finite())?;
                t.to_string()
            }
            (CellValue::Integer(i), LiteralKind::Str) => i.to_string(),
            (CellValue::Real(f), LiteralKind::Str) => f.to_string(),
            (CellValue::Text(s), LiteralKind::Str) => s.clone(),
        };
        Some(Literal { kind, text })
    }

    /// Whether this value denotes the same constant as a literal's text.
    pub fn matches_literal(&self, lit: &Literal) -> bool {
        match (self, lit.kind) {
            (CellValue::Text(s), LiteralKind::Str) => *s == lit.text,
            (CellValue::Text(s), LiteralKind::Num) => s.trim() == lit.text,
            (CellValue::Integer(i), _) => {
                lit.text.trim().parse::<f64>().is_ok_and(|f| f == *i as f64)
            }
            (CellValue::Real(r), _) => lit.text.trim().parse::<f64>().is_ok_and(|f| f == *r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOutcome {
    pub rows: usize,
}

pub struct Database {
    conn: Connection,
    path: PathBuf,
}

impl std::fmt::Debug for Database {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Database")
            .field("path", &self.path)
            .finish()
    }
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

impl Database {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, DbError> {
        let path = path.as_ref().to_path_buf();
        if !path.is_file() {
            return Err(DbError::Missing(path));
        }
        let conn =
            Connection::open_with_flags(&path, OpenFlags::SQLITE_OPEN_READ_ONLY).map_err(|e| {
                DbError::Open {
                    path: path.clone(),
                    message: e.to_string(),
                }
            })?;
        Ok(Self { conn, path })
    }

    /// Opens `<root>/<db_id>/<db_id>.sqlite`.
    pub fn open_in(root: impl AsRef<Path>, db_id: &str) -> Result<Self, DbError> {
        Self::open(crate::ingest::database_path(root, db_id))
    }

    /// Builds a database file from a SQL script, replacing any existing file.
    pub fn create_from_script(script: &str, out: impl AsRef<Path>) -> Result<(), DbError> {
        let out = out.as_ref();
        if let Some(parent) = out.parent() {
            std::fs::create_dir_all(parent).map_err(|e| DbError::Execution(e.to_string()))?;
        }
        let _ = std::fs::remove_file(out);
        let conn = Connection::open(out).map_err(|e| DbError::Open {
            path: out.to_path_buf(),
            message: e.to_string(),
        })?;
        conn.execute_batch(script)
            .map_err(|e| DbError::Execution(e.to_string()))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Runs a query to completion, counting result rows. Interrupted once
    /// `timeout` elapses.
    pub fn execute(&self, sql: &str, timeout: Duration) -> Result<ExecOutcome, DbError> {
        let deadline = Instant::now() + timeout;
        self.conn
            .progress_handler(1000, Some(move || Instant::now() > deadline));
        let result = self.run(sql);
        self.conn.progress_handler(0, None::<fn() -> bool>);
        match result {
            Err(rusqlite::Error::SqliteFailure(e, _))
                if e.code == rusqlite::ErrorCode::OperationInterrupted =>
            {
                Err(DbError::Timeout(timeout))
            }
            Err(e) => Err(DbError::Execution(e.to_string())),
            Ok(rows) => Ok(ExecOutcome { rows }),
        }
    }

    fn run(&self, sql: &str) -> rusqlite::Result<usize> {
        let mut stmt = self.conn.prepare(sql)?;
        let mut rows = stmt.query([])?;
        let mut n = 0;
        while rows.next()?.is_some() {
            n += 1;
        }
        Ok(n)
    }

    /// Distinct non-null values of a column in ascending order.
    pub fn distinct_values(&self, column: &ColumnKey) -> Result<Vec<CellValue>, DbError> {
        let sql = format!(
            "SELECT DISTINCT {c} FROM {t} WHERE {c} IS NOT NULL ORDER BY {c}",
            c = quote_ident(&column.column),
            t = quote_ident(&column.table)
        );
        let mut stmt = self
            .conn
            .prepare(&sql)
            .map_err(|e| DbError::Execution(e.to_string()))?;
        let mut rows = stmt
            .query([])
            .map_err(|e| DbError::Execution(e.to_string()))?;
        let mut out = Vec::new();
        while let Some(row) = rows.next().map_err(|e| DbError::Execution(e.to_string()))? {
            let v = match row
                .get_ref(0)
                .map_err(|e| DbError::Execution(e.to_string()))?
            {
                ValueRef::Integer(i) => CellValue::Integer(i),
                ValueRef::Real(f) => CellValue::Real(f),
                ValueRef::Text(t) => CellValue::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(_) | ValueRef::Null => continue,
            };
            out.push(v);
        }
        Ok(out)
    }
}
