//! Run configuration: one TOML file per run, with command-line overrides
//! applied on top before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::generate::GenerationSettings;
use crate::llm::http::HttpSettings;
use crate::metrics::Smoothing;
use crate::paraphrase::ParaphraseSettings;
use crate::retrieval::Normalizer;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid `{field}`: {message}")]
    Invalid {
        field: &'static str,
        message: String,
    },
}

impl ConfigError {
    fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Reformer,
    Paraphrase,
    Craft,
    Perturb,
    Evaluate,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Reformer => "reformer",
            Strategy::Paraphrase => "paraphrase",
            Strategy::Craft => "craft",
            Strategy::Perturb => "perturb",
            Strategy::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Training pairs in Spider format.
    pub train: Option<PathBuf>,
    /// Spider `tables.json`.
    pub schemas: Option<PathBuf>,
    /// Holds `<db_id>/<db_id>.sqlite`.
    pub db_root: Option<PathBuf>,
    /// Queries to synthesize questions for: a JSON list of `{db_id, query}`.
    pub new_queries: Option<PathBuf>,
    /// Category labels per db_id, for per-category perturbation.
    pub categories: Option<PathBuf>,
    /// SQL template pack replacing the built-in one.
    pub templates: Option<PathBuf>,
    /// Generated records to score, for `evaluate`.
    pub dataset: Option<PathBuf>,
    /// Reference pairs to score against, for `evaluate`.
    pub gold: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Normalized tree edit distance below which a training query counts as
    /// related.
    pub ted: f64,
    /// Cosine acceptance threshold for generated questions.
    pub lambda: f64,
    /// Acceptance threshold for schema paraphrases.
    pub paraphrase_lambda: f64,
    /// A word is kept in templates if it occurs in more than this fraction
    /// of schemas.
    pub keep: f64,
    /// Share of training queries whose constants are replaced.
    pub fraction: f64,
    pub top_k: usize,
    pub max_hits: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            ted: 0.1,
            lambda: 0.85,
            paraphrase_lambda: 0.9,
            keep: 0.5,
            fraction: 0.7,
            top_k: 5,
            max_hits: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub max_in_flight: usize,
    pub requests_per_second: Option<f64>,
    pub retry_attempts: u32,
    pub retry_base_ms: u64,
    pub retry_max_ms: u64,
    pub http: HttpSettings,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Stub,
            max_in_flight: 4,
            requests_per_second: None,
            retry_attempts: 4,
            retry_base_ms: 500,
            retry_max_ms: 8000,
            http: HttpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyOptions {
    /// Paraphrases requested per training question or crafted query.
    pub paraphrases: usize,
    /// Process at most this many training questions in `paraphrase`.
    pub limit: Option<usize>,
    /// Run cycle validation on crafted-query questions too.
    pub validate_crafted: bool,
    /// Sample the perturbation fraction within each category.
    pub per_category: bool,
}

impl Default for StrategyOptions {
    fn default() -> Self {
        Self {
            paraphrases: 3,
            limit: None,
            validate_crafted: false,
            per_category: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub seed: Option<u64>,
    pub normalizer: Normalizer,
    pub smoothing: Smoothing,
    pub paths: Paths,
    pub thresholds: Thresholds,
    pub options: StrategyOptions,
    pub generation: GenerationSettings,
    pub paraphrase: ParaphraseSettings,
    pub provider: ProviderConfig,
}

fn unit_open(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(
            field,
            format!("must be in (0, 1], got {v}"),
        ))
    }
}

fn unit_closed(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::invalid(
            field,
            format!("must be in [0, 1], got {v}"),
        ))
    }
}

impl RunConfig {
    /// Parses a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.train,
            &mut p.schemas,
            &mut p.db_root,
            &mut p.new_queries,
            &mut p.categories,
            &mut p.templates,
            &mut p.dataset,
            &mut p.gold,
            &mut p.output_dir,
            &mut p.cache_dir,
        ] {
            if let Some(v) = slot.as_mut().filter(|v| v.is_relative()) {
                *v = base.join(&*v);
            }
        }
    }

    /// Range checks and per-strategy requirements. Errors name the field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.thresholds;
        unit_open("ted", t.ted)?;
        unit_open("lambda", t.lambda)?;
        unit_open("paraphrase_lambda", t.paraphrase_lambda)?;
        unit_closed("keep", t.keep)?;
        unit_closed("fraction", t.fraction)?;
        if t.top_k == 0 {
            return Err(ConfigError::invalid("top_k", "must be at least 1"));
        }
        if t.max_hits == 0 {
            return Err(ConfigError::invalid("max_hits", "must be at least 1"));
        }
        let g = &self.generation;
        for (field, v) in [
            ("generation.explain_temperature", g.explain_temperature),
            ("generation.fill_temperature", g.fill_temperature),
            (
                "paraphrase.extract_temperature",
                self.paraphrase.extract_temperature,
            ),
            (
                "paraphrase.paraphrase_temperature",
                self.paraphrase.paraphrase_temperature,
            ),
            (
                "paraphrase.fill_temperature",
                self.paraphrase.fill_temperature,
            ),
        ] {
            if !(0.0..=2.0).contains(&v) {
                return Err(ConfigError::invalid(
                    field,
                    format!("must be in [0, 2], got {v}"),
                ));
            }
        }
        if g.fill_samples == 0 {
            return Err(ConfigError::invalid(
                "generation.fill_samples",
                "must be at least 1",
            ));
        }
        if self.provider.max_in_flight == 0 {
            return Err(ConfigError::invalid(
                "provider.max_in_flight",
                "must be at least 1",
            ));
        }
        if self.provider.retry_attempts == 0 {
            return Err(ConfigError::invalid(
                "provider.retry_attempts",
                "must be at least 1",
            ));
        }
        if self
            .provider
            .requests_per_second
            .is_some_and(|r| r.is_nan() || r <= 0.0)
        {
            return Err(ConfigError::invalid(
                "provider.requests_per_second",
                "must be positive",
            ));
        }
        if self.seed.is_none()
            && (self.strategy == Strategy::Perturb || self.provider.kind == ProviderKind::Stub)
        {
            return Err(ConfigError::invalid(
                "seed",
                "required for perturb and stub-provider runs",
            ));
        }
        let p = &self.paths;
        let need = |field: &'static str, v: &Option<PathBuf>| {
            v.as_ref()
                .map(|_| ())
                .ok_or_else(|| ConfigError::invalid(field, "required for this strategy"))
        };
        need("paths.output_dir", &p.output_dir)?;
        match self.strategy {
            Strategy::Reformer => {
                need("paths.train", &p.train)?;
                need("paths.schemas", &p.schemas)?;
                need("paths.new_queries", &p.new_queries)?;
            }
            Strategy::Paraphrase => {
                need("paths.train", &p.train)?;
                need("paths.schemas", &p.schemas)?;
            }
            Strategy::Craft => {
                need("paths.schemas", &p.schemas)?;
                need("paths.db_root", &p.db_root)?;
            }
            Strategy::Perturb => {
                need("paths.train", &p.train)?;
                need("paths.schemas", &p.schemas)?;
                need("paths.db_root", &p.db_root)?;
                if self.options.per_category {
                    need("paths.categories", &p.categories)?;
                }
            }
            Strategy::Evaluate => {
                need("paths.dataset", &p.dataset)?;
                need("paths.gold", &p.gold)?;
            }
        }
        Ok(())
    }
}
