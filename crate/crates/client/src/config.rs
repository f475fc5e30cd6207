use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EndpointConfigError {
    #[error("timeout must be positive and finite, got {0}")]
    Timeout(f64),
    #[error("base URL is empty")]
    EmptyUrl,
}

/// Where and how to reach one served model.
///
/// The API key, if any, is read from the environment variable named by
/// `api_key_env` at request time and sent as a bearer token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// E.g. `http://127.0.0.1:8000`.
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// The server returns prompt log-probabilities on `echo`.
    #[serde(default = "default_true")]
    pub echo_logprobs: bool,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Block delimiters.
    #[serde(default = "default_stop")]
    pub stop: Vec<String>,
    #[serde(default = "default_completions_path")]
    pub completions_path: String,
    #[serde(default = "default_prm_path")]
    pub prm_path: String,
    /// First retry delay; doubles on every attempt, capped at the timeout.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_true() -> bool {
    true
}
fn default_temperature() -> f64 {
    1.0
}
fn default_stop() -> Vec<String> {
    vec!["\n\n".to_string()]
}
fn default_completions_path() -> String {
    "/v1/completions".to_string()
}
fn default_prm_path() -> String {
    "/v1/prm".to_string()
}
fn default_backoff() -> u64 {
    100
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            echo_logprobs: true,
            temperature: default_temperature(),
            stop: default_stop(),
            completions_path: default_completions_path(),
            prm_path: default_prm_path(),
            backoff_ms: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<(), EndpointConfigError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(EndpointConfigError::Timeout(self.timeout_secs));
        }
        if self.base_url.trim().is_empty() {
            return Err(EndpointConfigError::EmptyUrl);
        }
        Ok(())
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }

    pub fn api_key(&self) -> Option<String> {
        self.api_key_env
            .as_ref()
            .and_then(|name| std::env::var(name).ok())
            .filter(|k| !k.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_minimal_json() {
        let cfg: EndpointConfig =
            serde_json::from_str(r#"{"base_url": "http://h:1/", "model": "m"}"#).unwrap();
        assert_eq!(cfg, EndpointConfig::new("http://h:1/", "m"));
        assert_eq!(cfg.url("/v1/completions"), "http://h:1/v1/completions");
        assert_eq!(cfg.stop, vec!["\n\n"]);
    }

    #[test]
    fn rejects_bad_timeout() {
        let mut cfg = EndpointConfig::new("http://h", "m");
        cfg.timeout_secs = 0.0;
        assert_eq!(cfg.validate(), Err(EndpointConfigError::Timeout(0.0)));
    }
}
