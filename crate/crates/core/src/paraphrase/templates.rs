//! Typed-hole SQL shapes used to synthesize queries for a schema.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

const BUILTIN: &str = include_str!("../../assets/sql_templates.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum HoleKind {
    Table,
    /// A table with a foreign key to or from the named table hole.
    LinkedTable(String),
    Column(String),
    NumericColumn(String),
    TextColumn(String),
    /// A literal suited to the named column hole.
    Value(String),
    /// A comparison operator suited to the named column hole.
    Op(String),
    Agg,
    Number,
    JoinOn(String, String),
}

impl HoleKind {
    pub fn is_column(&self) -> bool {
        matches!(
            self,
            HoleKind::Column(_) | HoleKind::NumericColumn(_) | HoleKind::TextColumn(_)
        )
    }

    pub fn is_table(&self) -> bool {
        matches!(self, HoleKind::Table | HoleKind::LinkedTable(_))
    }

    /// Holes this one is constrained by, with whether each must be a table.
    fn references(&self) -> Vec<(&str, bool)> {
        match self {
            HoleKind::Table | HoleKind::Agg | HoleKind::Number => vec![],
            HoleKind::LinkedTable(t)
            | HoleKind::Column(t)
            | HoleKind::NumericColumn(t)
            | HoleKind::TextColumn(t) => {
                vec![(t, true)]
            }
            HoleKind::Value(c) | HoleKind::Op(c) => vec![(c, false)],
            HoleKind::JoinOn(a, b) => vec![(a, true), (b, true)],
        }
    }
}

impl fmt::Display for HoleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HoleKind::Table => f.write_str("table"),
            HoleKind::LinkedTable(t) => write!(f, "linked_table {t}"),
            HoleKind::Column(t) => write!(f, "column {t}"),
            HoleKind::NumericColumn(t) => write!(f, "numeric_column {t}"),
            HoleKind::TextColumn(t) => write!(f, "text_column {t}"),
            HoleKind::Value(c) => write!(f, "value {c}"),
            HoleKind::Op(c) => write!(f, "op {c}"),
            HoleKind::Agg => f.write_str("agg"),
            HoleKind::Number => f.write_str("number"),
            HoleKind::JoinOn(a, b) => write!(f, "join_on {a} {b}"),
        }
    }
}

impl FromStr for HoleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let one = |f: fn(String) -> HoleKind| Ok(f(parts[1].to_string()));
        match parts.as_slice() {
            ["table"] => Ok(HoleKind::Table),
            ["agg"] => Ok(HoleKind::Agg),
            ["number"] => Ok(HoleKind::Number),
            ["linked_table", _] => one(HoleKind::LinkedTable),
            ["column", _] => one(HoleKind::Column),
            ["numeric_column", _] => one(HoleKind::NumericColumn),
            ["text_column", _] => one(HoleKind::TextColumn),
            ["value", _] => one(HoleKind::Value),
            ["op", _] => one(HoleKind::Op),
            ["join_on", a, b] => Ok(HoleKind::JoinOn(a.to_string(), b.to_string())),
            _ => Err(format!("unknown hole kind `{s}`")),
        }
    }
}

impl From<HoleKind> for String {
    fn from(k: HoleKind) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for HoleKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Basic,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlTemplate {
    pub id: String,
    pub tier: Tier,
    /// SQL text with `{name}` holes.
    pub shape: String,
    /// Holes in dependency order.
    pub holes: Vec<(String, HoleKind)>,
}

/// `{name}` occurrences in order, with duplicates.
fn shape_holes(shape: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = shape;
    while let Some(open) = rest.find('{') {
        let Some(len) = rest[open..].find('}') else {
            break;
        };
        out.push(&rest[open + 1..open + len]);
        rest = &rest[open + len + 1..];
    }
    out
}

impl SqlTemplate {
    /// Every shape hole is typed, every typed hole is used, and references
    /// point at earlier holes of the right sort.
    pub fn check(&self) -> Result<(), String> {
        let used: BTreeSet<&str> = shape_holes(&self.shape).into_iter().collect();
        let mut declared: Vec<(&str, &HoleKind)> = Vec::new();
        for (name, kind) in &self.holes {
            if declared.iter().any(|(n, _)| n == name) {
                return Err(format!("{}: hole `{name}` declared twice", self.id));
            }
            for (r, want_table) in kind.references() {
                match declared.iter().find(|(n, _)| *n == r) {
                    Some((_, k)) if k.is_table() == want_table && (want_table || k.is_column()) => {
                    }
                    _ => {
                        return Err(format!(
                            "{}: hole `{name}` refers to `{r}`, which is not an earlier {} hole",
                            self.id,
                            if want_table { "table" } else { "column" }
                        ))
                    }
                }
            }
            declared.push((name, kind));
        }
        let typed: BTreeSet<&str> = declared.iter().map(|(n, _)| *n).collect();
        if let Some(h) = used.difference(&typed).next() {
            return Err(format!("{}: shape hole `{h}` has no type", self.id));
        }
        if let Some(h) = typed.difference(&used).next() {
            return Err(format!("{}: typed hole `{h}` is not in the shape", self.id));
        }
        Ok(())
    }

    /// The shape with holes written as `[name]`, the form used in prompts.
    pub fn bracketed(&self) -> String {
        let mut out = self.shape.clone();
        for (name, _) in &self.holes {
            out = out.replace(&format!("{{{name}}}"), &format!("[{name}]"));
        }
        out
    }

    /// One `name: kind` line per hole.
    pub fn hole_lines(&self) -> String {
        self.holes
            .iter()
            .map(|(n, k)| format!("{n}: {k}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPack {
    version: u32,
    template: Vec<RawTemplate>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemplate {
    id: String,
    tier: Tier,
    shape: String,
    holes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TemplatePack {
    pub version: u32,
    pub templates: Vec<SqlTemplate>,
}

impl TemplatePack {
    pub fn builtin() -> &'static TemplatePack {
        static PACK: OnceLock<TemplatePack> = OnceLock::new();
        PACK.get_or_init(|| {
            TemplatePack::from_toml(BUILTIN).expect("builtin template pack is valid")
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let raw: RawPack = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut ids = BTreeSet::new();
        let mut templates = Vec::with_capacity(raw.template.len());
        for t in raw.template {
            if !ids.insert(t.id.clone()) {
                return Err(format!("duplicate template id `{}`", t.id));
            }
            let holes = t
                .holes
                .iter()
                .map(|h| {
                    let (name, kind) = h
                        .split_once(':')
                        .ok_or_else(|| format!("{}: bad hole `{h}`", t.id))?;
                    Ok((
                        name.trim().to_string(),
                        kind.trim()
                            .parse::<HoleKind>()
                            .map_err(|e| format!("{}: {e}", t.id))?,
                    ))
                })
                .collect::<Result<Vec<_>, String>>()?;
            let template = SqlTemplate {
                id: t.id,
                tier: t.tier,
                shape: t.shape,
                holes,
            };
            template.check()?;
            templates.push(template);
        }
        Ok(Self {
            version: raw.version,
            templates,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hole_kinds_round_trip() {
        for s in [
            "table",
            "linked_table t1",
            "column t1",
            "numeric_column t1",
            "text_column t1",
            "value c1",
            "op c1",
            "agg",
            "number",
            "join_on t1 t2",
        ] {
            assert_eq!(s.parse::<HoleKind>().unwrap().to_string(), s);
        }
        assert!("column".parse::<HoleKind>().is_err());
        assert!("colour t1".parse::<HoleKind>().is_err());
    }

    #[test]
    fn builtin_pack_covers_the_clause_inventory() {
        let pack = TemplatePack::builtin();
        let basic = pack
            .templates
            .iter()
            .filter(|t| t.tier == Tier::Basic)
            .count();
        assert_eq!((basic, pack.templates.len() - basic), (12, 8));
        let all: String = pack
            .templates
            .iter()
            .map(|t| t.shape.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        for clause in [
            "SELECT",
            "FROM",
            "WHERE",
            "GROUP BY",
            "ORDER BY",
            "LIMIT",
            " IN (",
            "UNION",
            "EXCEPT",
            "INTERSECT",
            "HAVING",
            "JOIN",
        ] {
            assert!(all.contains(clause), "{clause}");
        }
        for t in &pack.templates {
            if t.tier == Tier::Basic {
                assert!(
                    !["UNION", "EXCEPT", "INTERSECT", " IN ("]
                        .iter()
                        .any(|c| t.shape.contains(c)),
                    "{}",
                    t.id
                );
            }
        }
    }

    #[test]
    fn bracketed_form() {
        let t = &TemplatePack::builtin().templates[2];
        assert_eq!(t.bracketed(), "SELECT [c1] FROM [t1] WHERE [c2] [o1] [v1]");
        assert_eq!(t.hole_lines().lines().next(), Some("t1: table"));
    }

    fn pack(shape: &str, holes: &str) -> Result<TemplatePack, String> {
        TemplatePack::from_toml(&format!(
            "version = 1\n[[template]]\nid = \"x\"\ntier = \"basic\"\nshape = \"{shape}\"\nholes = [{holes}]"
        ))
    }

    #[test]
    fn pack_validation() {
        assert!(pack("SELECT {c1} FROM {t1}", "\"t1: table\", \"c1: column t1\"").is_ok());
        assert!(pack("SELECT {c1} FROM {t1}", "\"t1: table\"")
            .unwrap_err()
            .contains("`c1` has no type"));
        assert!(
            pack("SELECT 1 FROM {t1}", "\"t1: table\", \"c1: column t1\"")
                .unwrap_err()
                .contains("not in the shape")
        );
        assert!(
            pack("SELECT {c1} FROM {t1}", "\"c1: column t1\", \"t1: table\"")
                .unwrap_err()
                .contains("earlier")
        );
        assert!(pack("{t1} {v1}", "\"t1: table\", \"v1: value t1\"")
            .unwrap_err()
            .contains("column"));
    }
}
