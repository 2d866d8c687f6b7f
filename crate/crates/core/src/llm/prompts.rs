//! Prompt catalog and rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const BUILTIN: &str = include_str!("../../assets/prompts.toml");

/// Placeholder that receives the rendered one-shot example, if any.
pub const SHOT: &str = "shot";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ExplainForFill,
    ExplainForValidate,
    FillTemplate,
    ParaphraseWithSchema,
    ExtractTables,
    FillSqlTemplate,
    DescribeQuery,
    ParaphraseDescription,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::ExplainForFill,
        TemplateId::ExplainForValidate,
        TemplateId::FillTemplate,
        TemplateId::ParaphraseWithSchema,
        TemplateId::ExtractTables,
        TemplateId::FillSqlTemplate,
        TemplateId::DescribeQuery,
        TemplateId::ParaphraseDescription,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::ExplainForFill => "explain_for_fill",
            TemplateId::ExplainForValidate => "explain_for_validate",
            TemplateId::FillTemplate => "fill_template",
            TemplateId::ParaphraseWithSchema => "paraphrase_with_schema",
            TemplateId::ExtractTables => "extract_tables",
            TemplateId::FillSqlTemplate => "fill_sql_template",
            TemplateId::DescribeQuery => "describe_query",
            TemplateId::ParaphraseDescription => "paraphrase_description",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| PromptError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("prompt `{template}` is missing binding(s): {}", missing.join(", "))]
    MissingBinding {
        template: TemplateId,
        missing: Vec<String>,
    },
    #[error("prompt `{template}` has no placeholder for binding(s): {}", extra.join(", "))]
    UnexpectedBinding {
        template: TemplateId,
        extra: Vec<String>,
    },
    #[error("prompt catalog: {0}")]
    Catalog(String),
}

#[derive(Debug, Clone, Deserialize)]
struct RawTemplate {
    text: String,
    #[serde(default)]
    shot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub text: String,
    pub shot: Option<String>,
}

impl PromptTemplate {
    /// Placeholders of the main text, excluding the shot slot.
    pub fn placeholders(&self) -> BTreeSet<String> {
        placeholders(&self.text)
            .into_iter()
            .filter(|p| p != SHOT)
            .collect()
    }

    pub fn shot_placeholders(&self) -> BTreeSet<String> {
        self.shot.as_deref().map(placeholders).unwrap_or_default()
    }

    /// Hash of the template's text, part of every cache key derived from it.
    pub fn text_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.text.as_bytes());
        h.update([0]);
        if let Some(shot) = &self.shot {
            h.update(shot.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// A versioned set of prompt templates, one per [`TemplateId`].
#[derive(Debug, Clone)]
pub struct PromptCatalog {
    pub version: u32,
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl PromptCatalog {
    pub fn builtin() -> &'static PromptCatalog {
        static CATALOG: OnceLock<PromptCatalog> = OnceLock::new();
        CATALOG.get_or_init(|| {
            PromptCatalog::from_toml(BUILTIN).expect("builtin prompt catalog is valid")
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        let value: toml::Table =
            toml::from_str(text).map_err(|e| PromptError::Catalog(e.to_string()))?;
        let version = match value.get("version") {
            Some(toml::Value::Integer(v)) => {
                u32::try_from(*v).map_err(|_| PromptError::Catalog("bad version".into()))?
            }
            _ => return Err(PromptError::Catalog("missing integer `version`".into())),
        };
        let mut templates = BTreeMap::new();
        for (key, v) in value.iter().filter(|(k, _)| *k != "version") {
            let id: TemplateId = key.parse()?;
            let raw: RawTemplate = v
                .clone()
                .try_into()
                .map_err(|e| PromptError::Catalog(format!("{key}: {e}")))?;
            let t = PromptTemplate {
                id,
                text: raw.text.trim().to_string(),
                shot: raw.shot.map(|s| s.trim().to_string()),
            };
            if t.shot.is_some() && !placeholders(&t.text).contains(SHOT) {
                return Err(PromptError::Catalog(format!(
                    "{key}: has a shot section but no {{shot}} slot"
                )));
            }
            templates.insert(id, t);
        }
        if let Some(missing) = TemplateId::ALL
            .iter()
            .find(|id| !templates.contains_key(id))
        {
            return Err(PromptError::Catalog(format!(
                "template `{missing}` not defined"
            )));
        }
        Ok(Self { version, templates })
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    /// Substitutes bindings into template `id`. Shot placeholders must be
    /// bound all together or not at all.
    pub fn render(
        &self,
        id: TemplateId,
        bindings: BTreeMap<String, String>,
    ) -> Result<PromptBundle, PromptError> {
        let t = self.get(id);
        let main = t.placeholders();
        let shot = t.shot_placeholders();
        let missing: Vec<String> = main
            .iter()
            .filter(|p| !bindings.contains_key(*p))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(PromptError::MissingBinding {
                template: id,
                missing,
            });
        }
        let bound_shot = shot.iter().filter(|p| bindings.contains_key(*p)).count();
        if bound_shot > 0 && bound_shot < shot.len() {
            let missing = shot
                .iter()
                .filter(|p| !bindings.contains_key(*p))
                .cloned()
                .collect();
            return Err(PromptError::MissingBinding {
                template: id,
                missing,
            });
        }
        let extra: Vec<String> = bindings
            .keys()
            .filter(|k| !main.contains(*k) && !shot.contains(*k))
            .cloned()
            .collect();
        if !extra.is_empty() {
            return Err(PromptError::UnexpectedBinding {
                template: id,
                extra,
            });
        }
        let shot_text = match (&t.shot, bound_shot) {
            (Some(s), n) if n > 0 => substitute(s, &bindings, ""),
            _ => String::new(),
        };
        let rendered = substitute(&t.text, &bindings, &shot_text);
        Ok(PromptBundle {
            template_id: id,
            template_hash: t.text_hash(),
            bindings,
            rendered,
        })
    }
}

/// Renders with the builtin catalog.
pub fn render_prompt(
    id: TemplateId,
    bindings: BTreeMap<String, String>,
) -> Result<PromptBundle, PromptError> {
    PromptCatalog::builtin().render(id, bindings)
}

/// Convenience for building binding maps from string pairs.
pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// A rendered prompt along with what it was rendered from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub template_id: TemplateId,
    pub template_hash: String,
    pub bindings: BTreeMap<String, String>,
    pub rendered: String,
}

fn is_placeholder_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn placeholders(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        rest = &rest[open + 1..];
        if let Some(close) = rest.find('}') {
            let name = &rest[..close];
            if is_placeholder_name(name) {
                out.insert(name.to_string());
                rest = &rest[close + 1..];
            }
        }
    }
    out
}

/// Single left-to-right pass; substituted values are never rescanned.
fn substitute(text: &str, bindings: &BTreeMap<String, String>, shot: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name = after
            .find('}')
            .map(|c| &after[..c])
            .filter(|n| is_placeholder_name(n));
        match name {
            Some(SHOT) => {
                out.push_str(shot);
                rest = &after[SHOT.len() + 1..];
            }
            Some(n) if bindings.contains_key(n) => {
                out.push_str(&bindings[n]);
                rest = &after[n.len() + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalog_has_every_template() {
        let c = PromptCatalog::builtin();
        for id in TemplateId::ALL {
            assert!(!c.get(id).text.is_empty());
            assert_eq!(id.as_str().parse::<TemplateId>().unwrap(), id);
        }
        assert_eq!(
            c.get(TemplateId::FillTemplate).placeholders(),
            ["explanation", "question_template"]
                .map(String::from)
                .into()
        );
    }

    #[test]
    fn renders_query_verbatim() {
        let q = "SELECT count(*) FROM pets WHERE name = '{x}'";
        let b = render_prompt(TemplateId::ExplainForFill, bindings([("query", q)])).unwrap();
        assert!(b.rendered.contains(q));
        assert!(!b.rendered.contains("{shot}"));
        assert!(!b.rendered.contains("Example"));
    }

    #[test]
    fn shot_section_renders_when_bound() {
        let b = render_prompt(
            TemplateId::ExplainForFill,
            bindings([
                ("query", "SELECT a FROM t"),
                ("query_similar", "SELECT b FROM u"),
                ("question_similar", "What are the b of u ?"),
            ]),
        )
        .unwrap();
        assert!(b.rendered.contains("SELECT b FROM u"));
        assert!(b.rendered.contains("What are the b of u ?"));
        let partial = render_prompt(
            TemplateId::ExplainForFill,
            bindings([("query", "q"), ("query_similar", "s")]),
        );
        assert!(
            matches!(partial, Err(PromptError::MissingBinding { missing, .. }) if missing == ["question_similar"])
        );
    }

    #[test]
    fn fill_prompt_contains_both_inputs() {
        let b = render_prompt(
            TemplateId::FillTemplate,
            bindings([
                ("question_template", "What is the MASK ?"),
                ("explanation", "return the weight"),
            ]),
        )
        .unwrap();
        assert!(b.rendered.contains("What is the MASK ?"));
        assert!(b.rendered.contains("return the weight"));
    }

    #[test]
    fn missing_and_extra_bindings_are_named() {
        let err = render_prompt(
            TemplateId::FillTemplate,
            bindings([("question_template", "x")]),
        )
        .unwrap_err();
        assert!(err.to_string().contains("explanation"), "{err}");
        let err = render_prompt(
            TemplateId::DescribeQuery,
            bindings([("query", "q"), ("bogus", "x")]),
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::UnexpectedBinding { .. }));
        assert!(matches!(
            "nope".parse::<TemplateId>(),
            Err(PromptError::UnknownTemplate(_))
        ));
    }

    #[test]
    fn no_unbound_placeholders_remain() {
        let c = PromptCatalog::builtin();
        for id in TemplateId::ALL {
            let t = c.get(id);
            let b: BTreeMap<String, String> = t
                .placeholders()
                .into_iter()
                .map(|p| (p, "v".to_string()))
                .collect();
            let r = c.render(id, b).unwrap();
            assert!(placeholders(&r.rendered).is_empty(), "{id}: {}", r.rendered);
        }
    }

    #[test]
    fn catalog_must_be_complete() {
        let err = PromptCatalog::from_toml("version = 1\n[describe_query]\ntext = \"{query}\"\n")
            .unwrap_err();
        assert!(matches!(err, PromptError::Catalog(_)));
    }
}
