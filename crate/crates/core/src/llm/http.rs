//! Chat-completions and embeddings over HTTP in the common OpenAI-style JSON
//! shape.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use ureq::Agent;

use super::{ChatRequest, Completion, Provider, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpSettings {
    /// e.g. `https://api.openai.com/v1`
    pub base_url: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub embedding_dim: usize,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            chat_model: "gpt-3.5-turbo".into(),
            embedding_model: "text-embedding-ada-002".into(),
            embedding_dim: 1536,
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
        }
    }
}

pub struct HttpProvider {
    settings: HttpSettings,
    api_key: String,
    agent: Agent,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // The key is deliberately left out.
        f.debug_struct("HttpProvider")
            .field("settings", &self.settings)
            .finish()
    }
}

impl HttpProvider {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(settings: HttpSettings) -> Result<Self, ProviderError> {
        let key = std::env::var(&settings.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                ProviderError::Auth(format!(
                    "environment variable {} is not set",
                    settings.api_key_env
                ))
            })?;
        Ok(Self::with_key(settings, key))
    }

    pub fn with_key(settings: HttpSettings, api_key: String) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            settings,
            api_key,
            agent,
        }
    }

    fn post(
        &self,
        path: &str,
        body: serde_json::Value,
    ) -> Result<serde_json::Value, ProviderError> {
        let url = format!("{}/{path}", self.settings.base_url.trim_end_matches('/'));
        let response = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body);
        let mut response = match response {
            Ok(r) => r,
            Err(e) => {
                return Err(ProviderError::Transient {
                    message: format!("{path}: {e}"),
                    retry_after: None,
                })
            }
        };
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = response.body_mut().read_to_string().unwrap_or_default();
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| ProviderError::Fatal(format!("{path}: bad JSON: {e}"))),
            401 | 403 => Err(ProviderError::Auth(format!("{path}: HTTP {status}"))),
            408 | 409 | 429 | 500..=599 => Err(ProviderError::Transient {
                message: format!("{path}: HTTP {status}"),
                retry_after,
            }),
            _ => Err(ProviderError::Fatal(format!(
                "{path}: HTTP {status}: {}",
                snippet(&text)
            ))),
        }
    }
}

fn snippet(s: &str) -> &str {
    match s.char_indices().nth(200) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn model_id(&self) -> &str {
        &self.settings.chat_model
    }

    fn embedding_model_id(&self) -> &str {
        &self.settings.embedding_model
    }

    fn embedding_dim(&self) -> usize {
        self.settings.embedding_dim
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        let body = json!({
            "model": self.settings.chat_model,
            "messages": [{"role": "user", "content": request.bundle.rendered}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let v = self.post("chat/completions", body)?;
        let choice = &v["choices"][0];
        let text = choice["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::Fatal("chat/completions: no message content".into()))?;
        Ok(Completion {
            text: text.trim().to_string(),
            truncated: choice["finish_reason"] == "length",
        })
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let v = self.post(
            "embeddings",
            json!({"model": self.settings.embedding_model, "input": text}),
        )?;
        v["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| ProviderError::Fatal("embeddings: no vector".into()))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| ProviderError::Fatal("embeddings: non-numeric entry".into()))
            })
            .collect()
    }
}
