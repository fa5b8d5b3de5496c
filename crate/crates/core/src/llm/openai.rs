//! Live provider speaking the OpenAI-compatible chat and embeddings API.

use std::time::Duration;

use serde_json::{json, Value};

use super::fixtures::ConfigError;
use super::{ChatRequest, Provider, ProviderError, ProviderResult};

pub const API_KEY_VAR: &str = "NPCSMITH_API_KEY";
pub const BASE_URL_VAR: &str = "NPCSMITH_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_CHAT_MODEL: &str = "gpt-4o";
pub const DEFAULT_EMBEDDING_MODEL: &str = "text-embedding-ada-002";

#[derive(Debug, Clone)]
pub struct OpenAiConfig {
    pub api_key: String,
    pub base_url: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub timeout: Duration,
}

impl OpenAiConfig {
    /// Reads the credential and optional base URL from the environment.
    /// `base_url` overrides the environment when given.
    pub fn from_env(base_url: Option<&str>) -> Result<Self, ConfigError> {
        let api_key = std::env::var(API_KEY_VAR)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or(ConfigError::MissingCredential(API_KEY_VAR))?;
        let base_url = base_url
            .map(str::to_owned)
            .or_else(|| std::env::var(BASE_URL_VAR).ok())
            .unwrap_or_else(|| DEFAULT_BASE_URL.to_owned());
        Ok(Self {
            api_key,
            base_url: base_url.trim_end_matches('/').to_owned(),
            chat_model: DEFAULT_CHAT_MODEL.to_owned(),
            embedding_model: DEFAULT_EMBEDDING_MODEL.to_owned(),
            timeout: Duration::from_secs(120),
        })
    }
}

pub struct OpenAiProvider {
    config: OpenAiConfig,
    client: reqwest::blocking::Client,
}

impl OpenAiProvider {
    pub fn new(config: OpenAiConfig) -> Result<Self, ConfigError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ConfigError::Invalid(format!("http client: {e}")))?;
        Ok(Self { config, client })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}/{path}", self.config.base_url);
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.config.api_key)
            .json(body)
            .send()
            .map_err(|e| ProviderError::Connection(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| ProviderError::Connection(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
            return Err(ProviderError::Connection(format!("{status}: {text}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Refusal(format!("{status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| ProviderError::Connection(format!("bad response body: {e}")))
    }
}

impl Provider for OpenAiProvider {
    fn chat(&self, request: &ChatRequest) -> ProviderResult {
        let mut body = json!({
            "model": self.config.chat_model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
        });
        if let Some(t) = request.temperature_hint {
            body["temperature"] = json!(t);
        }
        let reply = self.post("chat/completions", &body)?;
        let choice = &reply["choices"][0];
        if choice["finish_reason"] == "content_filter" {
            return Err(ProviderError::Refusal("content filter".into()));
        }
        if let Some(refusal) = choice["message"]["refusal"].as_str() {
            return Err(ProviderError::Refusal(refusal.to_owned()));
        }
        choice["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| ProviderError::Connection("response has no message content".into()))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let body = json!({"model": self.config.embedding_model, "input": texts});
        let reply = self.post("embeddings", &body)?;
        let mut data: Vec<(u64, Vec<f64>)> = reply["data"]
            .as_array()
            .ok_or_else(|| ProviderError::Connection("response has no data".into()))?
            .iter()
            .map(|item| {
                let index = item["index"].as_u64().unwrap_or(0);
                let vector = item["embedding"]
                    .as_array()
                    .map(|a| a.iter().filter_map(Value::as_f64).collect())
                    .unwrap_or_default();
                (index, vector)
            })
            .collect();
        data.sort_by_key(|(i, _)| *i);
        Ok(data.into_iter().map(|(_, v)| v).collect())
    }

    fn fingerprint(&self) -> String {
        format!("openai:{}", self.config.embedding_model)
    }
}
