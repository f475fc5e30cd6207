//! JSON wire formats.
//!
//! Completions follow the OpenAI `/v1/completions` shape. The PRM endpoint
//! takes `{"prompt": ..., "steps": [...]}` and returns one score per step as
//! `{"scores": [...]}`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    #[serde(default = "one")]
    pub n: usize,
    pub max_tokens: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
    #[serde(default = "unit_temperature")]
    pub temperature: f64,
    /// Number of top alternatives per token; any value requests the sampled
    /// token's log-probability.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<u32>,
    /// Return the prompt tokens (and their log-probabilities) in front of the
    /// completion.
    #[serde(default)]
    pub echo: bool,
    /// Keep the matched stop string at the end of the returned text.
    #[serde(default)]
    pub include_stop_str_in_output: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn one() -> usize {
    1
}

fn unit_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbs {
    pub tokens: Vec<String>,
    /// `None` for the first prompt token, which has no conditional probability.
    pub token_logprobs: Vec<Option<f64>>,
    /// Byte offset of each token in `prompt + text` (echo) or `text`.
    #[serde(default)]
    pub text_offset: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub index: usize,
    pub text: String,
    #[serde(default)]
    pub logprobs: Option<LogProbs>,
    /// `"stop"` (end of sequence or stop string) or `"length"`.
    #[serde(default)]
    pub finish_reason: Option<String>,
    /// The stop string that ended generation; absent for end of sequence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub model: String,
    pub choices: Vec<Choice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrmRequest {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub model: String,
    #[serde(default)]
    pub prompt: String,
    pub steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrmResponse {
    pub scores: Vec<f64>,
}
