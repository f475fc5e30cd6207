//! Remote generator and PRM adapters.

use std::thread;
use std::time::Duration;

use rand::RngCore;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tracing::{debug, warn};

use specs_core::{Block, BlockTrace, GeneratorModel, ModelError, RewardModel, Token};

use crate::config::EndpointConfig;
use crate::wire::{Choice, CompletionRequest, CompletionResponse, PrmRequest, PrmResponse};

/// A blocking JSON-over-HTTP client with retries.
#[derive(Debug, Clone)]
pub struct Transport {
    cfg: EndpointConfig,
    agent: ureq::Agent,
}

impl Transport {
    pub fn new(cfg: EndpointConfig) -> Result<Self, ModelError> {
        cfg.validate()
            .map_err(|e| ModelError::Unavailable(e.to_string()))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { cfg, agent })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.cfg.backoff_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms).min(Duration::from_secs_f64(self.cfg.timeout_secs))
    }

    /// POSTs `body` and parses the reply. Transport failures, 429 and 5xx are
    /// retried up to `max_retries` times.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, ModelError> {
        let url = self.cfg.url(path);
        let attempts = self.cfg.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.backoff(attempt - 1));
            }
            let mut req = self.agent.post(&url);
            if let Some(key) = self.cfg.api_key() {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let last = attempt + 1 == attempts;
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        let text = resp
                            .body_mut()
                            .read_to_string()
                            .map_err(|e| ModelError::MalformedResponse(e.to_string()))?;
                        return serde_json::from_str(&text)
                            .map_err(|e| ModelError::MalformedResponse(e.to_string()));
                    }
                    let retriable = status == 429 || status >= 500;
                    if !retriable || last {
                        return Err(ModelError::HttpStatus(status));
                    }
                    debug!(%url, status, attempt, "retrying");
                }
                Err(e) => {
                    if last {
                        warn!(%url, error = %e, "giving up");
                        return Err(ModelError::Timeout { attempts });
                    }
                    debug!(%url, error = %e, attempt, "retrying");
                }
            }
        }
        unreachable!("loop returns on the last attempt")
    }
}

/// A served completion model used as a block generator.
#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    name: String,
    transport: Transport,
}

impl RemoteGenerator {
    pub fn new(cfg: EndpointConfig) -> Result<Self, ModelError> {
        Ok(Self {
            name: cfg.model.clone(),
            transport: Transport::new(cfg)?,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        self.transport.config()
    }

    pub fn completion_request(&self, trace: &BlockTrace, n: usize, gamma: usize, seed: Option<u64>) -> CompletionRequest {
        let cfg = self.config();
        CompletionRequest {
            model: cfg.model.clone(),
            prompt: trace.full_text(),
            n,
            max_tokens: gamma,
            stop: cfg.stop.clone(),
            temperature: cfg.temperature,
            logprobs: Some(1),
            echo: false,
            include_stop_str_in_output: true,
            seed,
        }
    }

    /// Draws `n` blocks in one request.
    pub fn sample_blocks(
        &self,
        trace: &BlockTrace,
        n: usize,
        gamma: usize,
        seed: Option<u64>,
    ) -> Result<Vec<Block>, ModelError> {
        let req = self.completion_request(trace, n, gamma, seed);
        let resp: CompletionResponse = self.transport.post(&self.config().completions_path, &req)?;
        if resp.choices.len() != n {
            return Err(ModelError::MalformedResponse(format!(
                "asked for {n} choices, got {}",
                resp.choices.len()
            )));
        }
        let mut choices = resp.choices;
        choices.sort_by_key(|c| c.index);
        choices
            .iter()
            .map(|c| block_from_choice(c, &self.config().stop, gamma))
            .collect()
    }
}

/// Turns one completion choice into a block: truncated after the first
/// delimiter (kept) or at `gamma` tokens, terminal when the model stopped on
/// its own.
pub fn block_from_choice(choice: &Choice, stop: &[String], gamma: usize) -> Result<Block, ModelError> {
    let lp = choice
        .logprobs
        .as_ref()
        .ok_or_else(|| ModelError::MalformedResponse("choice without logprobs".into()))?;
    if lp.tokens.len() != lp.token_logprobs.len() {
        return Err(ModelError::MalformedResponse("token and logprob counts differ".into()));
    }
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    let mut text = String::new();
    let mut delimited = false;
    for (tok, lp) in lp.tokens.iter().zip(&lp.token_logprobs) {
        if tokens.len() == gamma {
            break;
        }
        let lp = lp.ok_or_else(|| ModelError::MalformedResponse("null logprob in completion".into()))?;
        text.push_str(tok);
        tokens.push(Token::Text(tok.clone()));
        logprobs.push(lp);
        if stop.iter().any(|s| !s.is_empty() && text.contains(s.as_str())) {
            delimited = true;
            break;
        }
    }
    let capped = tokens.len() == gamma && tokens.len() < lp.tokens.len();
    let terminal = !delimited
        && !capped
        && choice.finish_reason.as_deref() == Some("stop")
        && choice.stop_reason.is_none();
    let block = Block::new(tokens, terminal)
        .map_err(|e| ModelError::MalformedResponse(e.to_string()))?;
    Ok(block.with_logprobs(logprobs))
}

impl GeneratorModel for RemoteGenerator {
    fn name(&self) -> &str {
        &self.name
    }

    fn sample_block(&self, trace: &BlockTrace, gamma: usize, rng: &mut dyn RngCore) -> Result<Block, ModelError> {
        let seed = rng.next_u64();
        let mut blocks = self.sample_blocks(trace, 1, gamma, Some(seed))?;
        Ok(blocks.remove(0))
    }

    /// Sum of echoed prompt log-probabilities over the block's tokens.
    fn block_logprob(&self, trace: &BlockTrace, block: &Block) -> Result<f64, ModelError> {
        let cfg = self.config();
        if !cfg.echo_logprobs {
            return Err(ModelError::EchoUnsupported);
        }
        let context = trace.full_text();
        let req = CompletionRequest {
            model: cfg.model.clone(),
            prompt: format!("{context}{}", block.text()),
            n: 1,
            max_tokens: 0,
            stop: Vec::new(),
            temperature: cfg.temperature,
            logprobs: Some(1),
            echo: true,
            include_stop_str_in_output: false,
            seed: None,
        };
        let resp: CompletionResponse = self.transport.post(&cfg.completions_path, &req)?;
        let choice = resp
            .choices
            .first()
            .ok_or_else(|| ModelError::MalformedResponse("no choices".into()))?;
        let lp = choice.logprobs.as_ref().ok_or(ModelError::EchoUnsupported)?;
        if lp.text_offset.len() != lp.tokens.len() || lp.token_logprobs.len() != lp.tokens.len() {
            return Err(ModelError::MalformedResponse("echo logprob arrays differ in length".into()));
        }
        let mut total = 0.0;
        for (offset, value) in lp.text_offset.iter().zip(&lp.token_logprobs) {
            if *offset >= context.len() {
                total += value.ok_or_else(|| {
                    ModelError::MalformedResponse("null logprob inside the block".into())
                })?;
            }
        }
        Ok(total)
    }
}

/// A served process reward model.
///
/// The trace plus candidate is sent as a list of step texts; the score of the
/// last step, clamped to `[0, 1]`, is the candidate's reward.
#[derive(Debug, Clone)]
pub struct RemotePrm {
    transport: Transport,
}

impl RemotePrm {
    pub fn new(cfg: EndpointConfig) -> Result<Self, ModelError> {
        Ok(Self {
            transport: Transport::new(cfg)?,
        })
    }

    pub fn request(&self, trace: &BlockTrace, candidate: &Block) -> PrmRequest {
        let mut steps = trace.step_texts();
        steps.push(candidate.text());
        PrmRequest {
            model: self.transport.config().model.clone(),
            prompt: trace.prompt.clone(),
            steps,
        }
    }
}

impl RewardModel for RemotePrm {
    fn score(&self, trace: &BlockTrace, candidate: &Block) -> Result<f64, ModelError> {
        let req = self.request(trace, candidate);
        let resp: PrmResponse = self.transport.post(&self.transport.config().prm_path, &req)?;
        if resp.scores.len() != req.steps.len() {
            return Err(ModelError::MalformedResponse(format!(
                "{} steps scored, {} sent",
                resp.scores.len(),
                req.steps.len()
            )));
        }
        let last = *resp.scores.last().expect("at least the candidate step");
        if !last.is_finite() {
            return Err(ModelError::MalformedResponse(format!("non-finite score {last}")));
        }
        Ok(last.clamp(0.0, 1.0))
    }

    fn reward_range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
}
