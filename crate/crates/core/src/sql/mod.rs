//! SQL text to relational-algebra trees and back.
//!
//! Trees follow one layout throughout: relational operators keep their input
//! as the *last* child, with operator arguments before it.
//!
//! ```text
//! Limit(Literal, OrderBy(Asc|Desc(expr).., Distinct?(Project(item.., input))))
//! input := Filter(having, GroupBy(key.., Filter(where, from))) | ...
//! from  := Table | Join(from, Table, Filter(on)?)
//! ```
//!
//! Set operators take two query subtrees; `IN` subqueries become
//! `NestedIn(expr, query)` and scalar subqueries appear directly as a
//! comparison operand.

mod emit;
mod lexer;
mod lower;
mod parser;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ingest::{ColumnKey, DatabaseSchema};
use crate::tree::Node;

pub use emit::emit_sql;

/// Bumped whenever the label set or tree layout changes; persisted distance
/// caches keyed on tree hashes are invalidated by it.
pub const ALPHABET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SqlError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("no such column: {name} (candidates: {})", candidates.join(", "))]
    UnresolvedColumn {
        name: String,
        candidates: Vec<String>,
    },
    #[error("ambiguous column name: {name} (in {})", tables.join(", "))]
    AmbiguousColumn { name: String, tables: Vec<String> },
    #[error("no such table: {name} (candidates: {})", candidates.join(", "))]
    UnresolvedTable {
        name: String,
        candidates: Vec<String>,
    },
    #[error("unsupported construct at byte {pos}: {construct}")]
    Unsupported { construct: String, pos: usize },
    #[error("cannot emit SQL: {0}")]
    Emit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Neq,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Neq => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggFunc {
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

impl AggFunc {
    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Count => "count",
            AggFunc::Sum => "sum",
            AggFunc::Avg => "avg",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name.to_ascii_lowercase().as_str() {
            "count" => AggFunc::Count,
            "sum" => AggFunc::Sum,
            "avg" => AggFunc::Avg,
            "min" => AggFunc::Min,
            "max" => AggFunc::Max,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiteralKind {
    Num,
    Str,
}

impl LiteralKind {
    pub fn tag(self) -> &'static str {
        match self {
            LiteralKind::Num => "num",
            LiteralKind::Str => "str",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TableRef {
    pub name: String,
    pub alias: Option<String>,
}

/// A resolved column leaf. `qualifier` is the binding used in the query text
/// (alias or table name) and is what emission writes back.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: Option<String>,
    pub qualifier: Option<String>,
    pub name: String,
}

impl ColumnRef {
    pub const STAR: &'static str = "*";

    pub fn is_star(&self) -> bool {
        self.name == Self::STAR
    }

    pub fn key(&self) -> Option<ColumnKey> {
        if self.is_star() {
            return None;
        }
        Some(ColumnKey {
            table: self.table.clone()?,
            column: self.name.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub kind: LiteralKind,
    pub text: String,
}

/// The closed operator alphabet of algebra trees.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Project,
    Filter,
    Join,
    GroupBy,
    OrderBy,
    Limit,
    Distinct,
    Union,
    Except,
    Intersect,
    NestedIn,
    Asc,
    Desc,
    And,
    Or,
    Not,
    Like,
    Between,
    Cmp(CmpOp),
    Arith(ArithOp),
    Agg(AggFunc),
    Table(TableRef),
    Column(ColumnRef),
    Literal(Literal),
    AnonTable,
    AnonColumn,
    AnonLiteral(LiteralKind),
}

impl Label {
    pub fn is_anonymized_leaf(&self) -> bool {
        matches!(
            self,
            Label::AnonTable | Label::AnonColumn | Label::AnonLiteral(_)
        )
    }

    fn anonymize(&self) -> Label {
        match self {
            Label::Table(_) => Label::AnonTable,
            Label::Column(_) => Label::AnonColumn,
            Label::Literal(l) => Label::AnonLiteral(l.kind),
            other => other.clone(),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Project => f.write_str("Project"),
            Label::Filter => f.write_str("Filter"),
            Label::Join => f.write_str("Join"),
            Label::GroupBy => f.write_str("GroupBy"),
            Label::OrderBy => f.write_str("OrderBy"),
            Label::Limit => f.write_str("Limit"),
            Label::Distinct => f.write_str("Distinct"),
            Label::Union => f.write_str("Union"),
            Label::Except => f.write_str("Except"),
            Label::Intersect => f.write_str("Intersect"),
            Label::NestedIn => f.write_str("NestedIn"),
            Label::Asc => f.write_str("Asc"),
            Label::Desc => f.write_str("Desc"),
            Label::And => f.write_str("And"),
            Label::Or => f.write_str("Or"),
            Label::Not => f.write_str("Not"),
            Label::Like => f.write_str("Like"),
            Label::Between => f.write_str("Between"),
            Label::Cmp(op) => write!(f, "{op:?}"),
            Label::Arith(op) => write!(f, "{op:?}"),
            Label::Agg(func) => write!(f, "Agg:{}", func.name()),
            Label::Table(t) => write!(f, "Table:{}", t.name),
            Label::Column(c) => match &c.table {
                Some(t) => write!(f, "Column:{t}.{}", c.name),
                None => write!(f, "Column:{}", c.name),
            },
            Label::Literal(l) => write!(f, "Literal:{}:{}", l.kind.tag(), l.text),
            Label::AnonTable => f.write_str("TABLE"),
            Label::AnonColumn => f.write_str("COLUMN"),
            Label::AnonLiteral(kind) => write!(f, "LITERAL:{}", kind.tag()),
        }
    }
}

/// A relational-algebra tree parsed from one SQL query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AlgebraTree {
    root: Node<Label>,
    node_count: usize,
}

impl AlgebraTree {
    pub fn new(root: Node<Label>) -> Self {
        let node_count = root.node_count();
        Self { root, node_count }
    }

    pub fn root(&self) -> &Node<Label> {
        &self.root
    }

    pub fn into_root(self) -> Node<Label> {
        self.root
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn is_anonymized(&self) -> bool {
        !self.root.iter().any(|n| {
            matches!(
                n.label,
                Label::Table(_) | Label::Column(_) | Label::Literal(_)
            )
        })
    }

    pub fn to_sexp(&self) -> String {
        self.root.to_sexp()
    }

    /// Content hash of the tree's label structure.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(ALPHABET_VERSION.to_le_bytes());
        h.update(self.to_sexp().as_bytes());
        hex::encode(h.finalize())
    }

    /// Replaces the literal at `path`. Returns false if the path does not
    /// name a literal leaf.
    pub fn replace_literal(&mut self, path: &[usize], value: Literal) -> bool {
        match self.root.at_path_mut(path) {
            Some(node) if matches!(node.label, Label::Literal(_)) => {
                node.label = Label::Literal(value);
                true
            }
            _ => false,
        }
    }

    /// Checks the arity rules of the operator alphabet.
    pub fn check_arity(&self) -> Result<(), String> {
        for node in self.root.iter() {
            let n = node.children.len();
            let ok = match &node.label {
                Label::Union | Label::Except | Label::Intersect => n == 2,
                Label::Limit => {
                    n == 2
                        && matches!(
                            node.children[0].label,
                            Label::Literal(_) | Label::AnonLiteral(_)
                        )
                }
                Label::Table(_)
                | Label::Column(_)
                | Label::Literal(_)
                | Label::AnonTable
                | Label::AnonColumn
                | Label::AnonLiteral(_) => n == 0,
                Label::Filter => (1..=2).contains(&n),
                Label::NestedIn | Label::Like | Label::And | Label::Or => n == 2,
                Label::Cmp(_) | Label::Arith(_) => n == 2,
                Label::Not | Label::Asc | Label::Desc | Label::Agg(_) | Label::Distinct => n == 1,
                Label::Between => n == 3,
                Label::Join => n == 2 || n == 3,
                Label::Project | Label::GroupBy | Label::OrderBy => n >= 2,
            };
            if !ok {
                return Err(format!("{} has {n} children", node.label));
            }
        }
        Ok(())
    }
}

impl fmt::Display for AlgebraTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_sexp())
    }
}

/// Parses `query` and resolves every table and column against `schema`.
pub fn parse_sql(query: &str, schema: &DatabaseSchema) -> Result<AlgebraTree, SqlError> {
    let ast = parser::parse(query)?;
    let root = lower::lower(&ast, &lower::SchemaResolver(schema))?;
    Ok(AlgebraTree::new(root))
}

/// Parses without a schema: tables and columns are taken as written, and an
/// unqualified column is attributed to the only table in scope, if any.
pub fn parse_sql_lenient(query: &str) -> Result<AlgebraTree, SqlError> {
    let ast = parser::parse(query)?;
    let root = lower::lower(&ast, &lower::LenientResolver)?;
    Ok(AlgebraTree::new(root))
}

/// Replaces table, column, and literal labels with schema-free placeholders.
pub fn anonymize(tree: &AlgebraTree) -> AlgebraTree {
    AlgebraTree::new(tree.root.map(&Label::anonymize))
}

/// A replaceable literal compared against a resolved column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstantSite {
    pub path: Vec<usize>,
    pub column: ColumnKey,
    pub value: String,
    pub kind: LiteralKind,
}

/// Literals that appear as a direct operand of a comparison or `BETWEEN`
/// whose other operand is a column. `LIKE` patterns and `LIMIT` counts are
/// not constant sites.
pub fn constant_sites(tree: &AlgebraTree) -> Vec<ConstantSite> {
    let mut out = Vec::new();
    let mut path = Vec::new();
    collect_sites(&tree.root, &mut path, &mut out);
    out
}

fn collect_sites(node: &Node<Label>, path: &mut Vec<usize>, out: &mut Vec<ConstantSite>) {
    let column_of = |n: &Node<Label>| match &n.label {
        Label::Column(c) => c.key(),
        _ => None,
    };
    match &node.label {
        Label::Cmp(_) => {
            let (a, b) = (&node.children[0], &node.children[1]);
            for (col, lit, idx) in [(a, b, 1usize), (b, a, 0usize)] {
                if let (Some(column), Label::Literal(l)) = (column_of(col), &lit.label) {
                    let mut p = path.clone();
                    p.push(idx);
                    out.push(ConstantSite {
                        path: p,
                        column,
                        value: l.text.clone(),
                        kind: l.kind,
                    });
                }
            }
        }
        Label::Between => {
            if let Some(column) = column_of(&node.children[0]) {
                for idx in [1usize, 2] {
                    if let Label::Literal(l) = &node.children[idx].label {
                        let mut p = path.clone();
                        p.push(idx);
                        out.push(ConstantSite {
                            path: p,
                            column: column.clone(),
                            value: l.text.clone(),
                            kind: l.kind,
                        });
                    }
                }
            }
        }
        _ => {}
    }
    for (i, child) in node.children.iter().enumerate() {
        path.push(i);
        collect_sites(child, path, out);
        path.pop();
    }
}
