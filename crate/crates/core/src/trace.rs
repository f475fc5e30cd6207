//! Blocks, traces and the per-run configuration.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::StepLatency;

/// An opaque token identifier.
///
/// Toy models use small integer symbols, remote models use the token strings
/// returned by the endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Token {
    Sym(u32),
    Text(String),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Sym(s) => write!(f, "{s}"),
            Token::Text(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("cannot append a block after a terminal block")]
    AppendAfterTerminal,
    #[error("a non-terminal block must contain at least one token")]
    EmptyBlock,
}

/// One reasoning step: a contiguous span of tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub tokens: Vec<Token>,
    /// The block ends the response (contains end-of-sequence).
    #[serde(default)]
    pub terminal: bool,
    /// Log-probabilities of the sampled tokens under the model that produced
    /// them, when the producer reports them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

impl Block {
    pub fn new(tokens: Vec<Token>, terminal: bool) -> Result<Self, TraceError> {
        if tokens.is_empty() && !terminal {
            return Err(TraceError::EmptyBlock);
        }
        Ok(Self {
            tokens,
            terminal,
            token_logprobs: None,
        })
    }

    /// A single-symbol block, as used by the tabular toy models.
    pub fn symbol(sym: u32) -> Self {
        Self {
            tokens: vec![Token::Sym(sym)],
            terminal: false,
            token_logprobs: None,
        }
    }

    pub fn with_logprobs(mut self, logprobs: Vec<f64>) -> Self {
        self.token_logprobs = Some(logprobs);
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The symbol of a single-symbol block.
    pub fn as_symbol(&self) -> Option<u32> {
        match self.tokens.as_slice() {
            [Token::Sym(s)] => Some(*s),
            _ => None,
        }
    }

    /// Sum of the sampled-token log-probabilities, if the producer reported them.
    pub fn sampled_logprob(&self) -> Option<f64> {
        self.token_logprobs.as_ref().map(|lp| lp.iter().sum())
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            match t {
                Token::Text(s) => out.push_str(s),
                Token::Sym(s) => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(&s.to_string());
                }
            }
        }
        out
    }
}

/// Which model generated a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationSource {
    Target,
    Draft,
}

impl GenerationSource {
    pub fn as_char(self) -> char {
        match self {
            GenerationSource::Target => 'T',
            GenerationSource::Draft => 'D',
        }
    }
}

/// A prompt plus the ordered list of blocks generated so far.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BlockTrace {
    pub prompt: String,
    blocks: Vec<Block>,
    sources: Vec<GenerationSource>,
}

impl BlockTrace {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            blocks: Vec::new(),
            sources: Vec::new(),
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn sources(&self) -> &[GenerationSource] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn is_terminated(&self) -> bool {
        self.blocks.last().is_some_and(|b| b.terminal)
    }

    pub fn token_count(&self) -> usize {
        self.blocks.iter().map(Block::len).sum()
    }

    pub fn push(&mut self, block: Block, source: GenerationSource) -> Result<(), TraceError> {
        if self.is_terminated() {
            return Err(TraceError::AppendAfterTerminal);
        }
        self.blocks.push(block);
        self.sources.push(source);
        Ok(())
    }

    /// Returns a copy of the trace extended by `block`.
    pub fn append_block(
        &self,
        block: Block,
        source: GenerationSource,
    ) -> Result<BlockTrace, TraceError> {
        let mut next = self.clone();
        next.push(block, source)?;
        Ok(next)
    }

    /// The trace as a symbol prefix, when every block is a single symbol.
    pub fn symbols(&self) -> Option<Vec<u32>> {
        self.blocks.iter().map(Block::as_symbol).collect()
    }

    /// Block texts in order.
    pub fn step_texts(&self) -> Vec<String> {
        self.blocks.iter().map(Block::text).collect()
    }

    /// Prompt followed by the concatenated block texts.
    pub fn full_text(&self) -> String {
        let mut s = self.prompt.clone();
        for b in &self.blocks {
            s.push_str(&b.text());
        }
        s
    }

    pub fn source_string(&self) -> String {
        self.sources.iter().map(|s| s.as_char()).collect()
    }

    pub fn count_source(&self, source: GenerationSource) -> usize {
        self.sources.iter().filter(|s| **s == source).count()
    }

    /// True iff the trace should stop growing under `cfg`.
    pub fn is_complete(&self, cfg: &RunConfig) -> bool {
        self.is_terminated() || self.len() >= cfg.horizon || self.token_count() >= cfg.token_budget
    }
}

/// One candidate block together with its evaluations.
///
/// `score` is `(logp_target - logp_gen) + beta * prm_score` in the default
/// scoring mode. `logp_target` is `None` when the method never queried the
/// target model for this candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub block: Block,
    pub logp_gen: f64,
    pub logp_target: Option<f64>,
    pub prm_score: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamMode {
    #[default]
    Fixed,
    /// Width drawn as `Poisson(n)` conditioned on being positive.
    PoissonTruncated,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("beam width n must be at least 1")]
    ZeroWidth,
    #[error("block size gamma must be at least 1")]
    ZeroBlockSize,
    #[error("beta must be finite and non-negative, got {0}")]
    InvalidBeta(f64),
    #[error("horizon must be at least 1")]
    HorizonZero,
    #[error("token budget must be at least 1")]
    ZeroBudget,
    #[error("rsd_threshold must lie in [0, 1], got {0}")]
    InvalidRsdThreshold(f64),
    #[error("tau must be finite, got {0}")]
    InvalidTau(f64),
}

fn default_rsd_threshold() -> f64 {
    0.7
}

/// Hyperparameters of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Beam width (candidates per step).
    pub n: usize,
    /// Block size cap in tokens.
    pub gamma: usize,
    /// Switching threshold on the PRM scale.
    pub tau: f64,
    /// Tilt temperature.
    pub beta: f64,
    /// Maximum number of blocks.
    pub horizon: usize,
    /// Maximum number of tokens.
    pub token_budget: usize,
    #[serde(default)]
    pub beam_mode: BeamMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rsd_threshold")]
    pub rsd_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 4,
            gamma: 256,
            tau: 0.8,
            beta: 1.0,
            horizon: 20,
            token_budget: 2048,
            beam_mode: BeamMode::Fixed,
            seed: 0,
            rsd_threshold: default_rsd_threshold(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(ConfigError::ZeroWidth);
        }
        if self.gamma == 0 {
            return Err(ConfigError::ZeroBlockSize);
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(ConfigError::InvalidBeta(self.beta));
        }
        if self.horizon == 0 {
            return Err(ConfigError::HorizonZero);
        }
        if self.token_budget == 0 {
            return Err(ConfigError::ZeroBudget);
        }
        if !(0.0..=1.0).contains(&self.rsd_threshold) {
            return Err(ConfigError::InvalidRsdThreshold(self.rsd_threshold));
        }
        if self.tau.is_nan() {
            return Err(ConfigError::InvalidTau(self.tau));
        }
        Ok(())
    }
}

/// Outcome of one episode of any method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub trace: BlockTrace,
    pub per_step_latency: Vec<StepLatency>,
    /// Fraction of blocks generated by the target model.
    pub percent_big: f64,
    /// The candidate scores `S_i` seen at each step.
    pub selected_scores: Vec<Vec<f64>>,
    /// PRM score of the block kept at each step.
    pub step_rewards: Vec<f64>,
    /// Number of candidates drawn at each step (all batches included).
    pub widths: Vec<usize>,
}

impl EpisodeResult {
    pub fn final_reward(&self) -> Option<f64> {
        self.step_rewards.last().copied()
    }

    pub fn wall_time(&self) -> f64 {
        self.per_step_latency.iter().map(|s| s.wall_step).sum()
    }
}

pub(crate) fn percent_big(trace: &BlockTrace) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    trace.count_source(GenerationSource::Target) as f64 / trace.len() as f64
}
