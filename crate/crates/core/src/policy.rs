//! Generator and reward model interfaces, and exact tabular toy models.

use std::collections::BTreeMap;
use std::thread;
use std::time::Duration;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Block, BlockTrace};

/// Tolerance on row normalisation of tabular models.
pub const ROW_SUM_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model unavailable: {0}")]
    Unavailable(String),
    #[error("prefix {0:?} has no distribution in the table")]
    InvalidPrefix(Vec<u32>),
    #[error("block is not a symbol of this model's alphabet")]
    InvalidBlock,
    #[error("block has zero probability under the model")]
    ZeroProbability,
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("endpoint returned HTTP status {0}")]
    HttpStatus(u16),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("endpoint does not echo prompt log-probabilities")]
    EchoUnsupported,
}

/// A model that proposes the next block of a trace.
///
/// Implementations must be callable from several threads at once; sampling
/// randomness comes only from the caller-supplied `rng`.
pub trait GeneratorModel: Send + Sync {
    fn name(&self) -> &str;

    fn sample_block(
        &self,
        trace: &BlockTrace,
        gamma: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Block, ModelError>;

    /// Log-probability (nats) of `block` following `trace`.
    ///
    /// Finite models return `f64::NEG_INFINITY` for zero-probability blocks.
    fn block_logprob(&self, trace: &BlockTrace, block: &Block) -> Result<f64, ModelError>;

    /// Every possible next block with its probability, for finite models.
    fn enumerate_blocks(&self, _trace: &BlockTrace) -> Option<Result<Vec<(Block, f64)>, ModelError>> {
        None
    }
}

/// A process reward model scoring a trace extended by a candidate block.
pub trait RewardModel: Send + Sync {
    fn score(&self, trace: &BlockTrace, candidate: &Block) -> Result<f64, ModelError>;

    /// Declared `[lo, hi]` range of scores.
    fn reward_range(&self) -> (f64, f64);
}

impl<M: GeneratorModel + ?Sized> GeneratorModel for &M {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn sample_block(&self, t: &BlockTrace, g: usize, rng: &mut dyn RngCore) -> Result<Block, ModelError> {
        (**self).sample_block(t, g, rng)
    }
    fn block_logprob(&self, t: &BlockTrace, b: &Block) -> Result<f64, ModelError> {
        (**self).block_logprob(t, b)
    }
    fn enumerate_blocks(&self, t: &BlockTrace) -> Option<Result<Vec<(Block, f64)>, ModelError>> {
        (**self).enumerate_blocks(t)
    }
}

impl<M: RewardModel + ?Sized> RewardModel for &M {
    fn score(&self, t: &BlockTrace, c: &Block) -> Result<f64, ModelError> {
        (**self).score(t, c)
    }
    fn reward_range(&self) -> (f64, f64) {
        (**self).reward_range()
    }
}

/// All length-`horizon` symbol sequences in lexicographic order.
pub fn enumerate_responses(alphabet: usize, horizon: usize) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for _ in 0..horizon {
        let mut next = Vec::with_capacity(out.len() * alphabet);
        for p in &out {
            for s in 0..alphabet as u32 {
                let mut q = p.clone();
                q.push(s);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Index of a full response in [`enumerate_responses`] order.
pub fn response_index(alphabet: usize, response: &[u32]) -> usize {
    response
        .iter()
        .fold(0usize, |acc, &s| acc * alphabet + s as usize)
}

/// All prefixes of length `< horizon`, shortest first.
pub fn enumerate_prefixes(alphabet: usize, horizon: usize) -> Vec<Vec<u32>> {
    (0..horizon)
        .flat_map(|len| enumerate_responses(alphabet, len))
        .collect()
}

fn check_row(row: &[f64], alphabet: usize, what: &str) -> Result<(), ModelError> {
    if row.len() != alphabet {
        return Err(ModelError::InvalidTable(format!(
            "{what}: row has {} entries, alphabet has {alphabet}",
            row.len()
        )));
    }
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(ModelError::InvalidTable(format!("{what}: negative or non-finite entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(ModelError::InvalidTable(format!("{what}: row sums to {sum}")));
    }
    Ok(())
}

/// A finite-alphabet policy with one next-symbol distribution per prefix.
///
/// Every block is a single symbol and every full response has exactly
/// `horizon` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    name: String,
    alphabet: usize,
    horizon: usize,
    rows: BTreeMap<Vec<u32>, Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(
        name: impl Into<String>,
        alphabet: usize,
        horizon: usize,
        rows: BTreeMap<Vec<u32>, Vec<f64>>,
    ) -> Result<Self, ModelError> {
        if alphabet == 0 || horizon == 0 {
            return Err(ModelError::InvalidTable("alphabet and horizon must be positive".into()));
        }
        for (prefix, row) in &rows {
            if prefix.len() >= horizon {
                return Err(ModelError::InvalidTable(format!(
                    "prefix {prefix:?} is not shorter than the horizon"
                )));
            }
            if prefix.iter().any(|&s| s as usize >= alphabet) {
                return Err(ModelError::InvalidTable(format!("prefix {prefix:?} leaves the alphabet")));
            }
            check_row(row, alphabet, &format!("prefix {prefix:?}"))?;
        }
        let policy = Self {
            name: name.into(),
            alphabet,
            horizon,
            rows,
        };
        // Every reachable prefix needs a row.
        let mut frontier = vec![Vec::<u32>::new()];
        while let Some(prefix) = frontier.pop() {
            if prefix.len() >= horizon {
                continue;
            }
            let row = policy
                .rows
                .get(&prefix)
                .ok_or_else(|| ModelError::InvalidPrefix(prefix.clone()))?;
            for (s, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    let mut next = prefix.clone();
                    next.push(s as u32);
                    frontier.push(next);
                }
            }
        }
        Ok(policy)
    }

    /// Builds a policy with a row for every prefix from `f(prefix)`.
    pub fn from_fn(
        name: impl Into<String>,
        alphabet: usize,
        horizon: usize,
        mut f: impl FnMut(&[u32]) -> Vec<f64>,
    ) -> Result<Self, ModelError> {
        let rows = enumerate_prefixes(alphabet, horizon)
            .into_iter()
            .map(|p| {
                let row = f(&p);
                (p, row)
            })
            .collect();
        Self::new(name, alphabet, horizon, rows)
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rows(&self) -> &BTreeMap<Vec<u32>, Vec<f64>> {
        &self.rows
    }

    pub fn row(&self, prefix: &[u32]) -> Result<&[f64], ModelError> {
        self.rows
            .get(prefix)
            .map(Vec::as_slice)
            .ok_or_else(|| ModelError::InvalidPrefix(prefix.to_vec()))
    }

    /// True when every prefix shorter than the horizon has a row.
    pub fn is_total(&self) -> bool {
        let expected: usize = (0..self.horizon).map(|l| self.alphabet.pow(l as u32)).sum();
        self.rows.len() == expected
    }

    /// Probability of a full response (product of its conditionals).
    pub fn response_prob(&self, response: &[u32]) -> Result<f64, ModelError> {
        let mut p = 1.0;
        for t in 0..response.len() {
            let row = self.row(&response[..t])?;
            p *= row[response[t] as usize];
            if p == 0.0 {
                break;
            }
        }
        Ok(p)
    }

    /// Probabilities of every full response in [`enumerate_responses`] order.
    pub fn response_distribution(&self) -> Result<Vec<f64>, ModelError> {
        enumerate_responses(self.alphabet, self.horizon)
            .iter()
            .map(|r| self.response_prob(r))
            .collect()
    }

    fn symbol_of(&self, block: &Block) -> Result<u32, ModelError> {
        match block.as_symbol() {
            Some(s) if (s as usize) < self.alphabet => Ok(s),
            _ => Err(ModelError::InvalidBlock),
        }
    }

    fn prefix_of(trace: &BlockTrace) -> Result<Vec<u32>, ModelError> {
        trace.symbols().ok_or(ModelError::InvalidBlock)
    }
}

impl GeneratorModel for TabularPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn sample_block(
        &self,
        trace: &BlockTrace,
        _gamma: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Block, ModelError> {
        let prefix = Self::prefix_of(trace)?;
        let row = self.row(&prefix)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (s, &p) in row.iter().enumerate() {
            if p > 0.0 {
                last_positive = s;
            }
            acc += p;
            if u < acc && p > 0.0 {
                return Ok(Block::symbol(s as u32).with_logprobs(vec![p.ln()]));
            }
        }
        // Rounding left `u` above the cumulative sum.
        Ok(Block::symbol(last_positive as u32).with_logprobs(vec![row[last_positive].ln()]))
    }

    fn block_logprob(&self, trace: &BlockTrace, block: &Block) -> Result<f64, ModelError> {
        let prefix = Self::prefix_of(trace)?;
        let sym = self.symbol_of(block)?;
        Ok(self.row(&prefix)?[sym as usize].ln())
    }

    fn enumerate_blocks(&self, trace: &BlockTrace) -> Option<Result<Vec<(Block, f64)>, ModelError>> {
        let rows = Self::prefix_of(trace).and_then(|p| self.row(&p).map(<[f64]>::to_vec));
        Some(rows.map(|row| {
            row.into_iter()
                .enumerate()
                .map(|(s, p)| (Block::symbol(s as u32), p))
                .collect()
        }))
    }
}

/// Outcome reward of each full response of a tabular instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseReward {
    pub alphabet: usize,
    pub horizon: usize,
    /// Indexed in [`enumerate_responses`] order.
    pub values: Vec<f64>,
}

impl ResponseReward {
    pub fn new(alphabet: usize, horizon: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        let expected = alphabet.pow(horizon as u32);
        if values.len() != expected {
            return Err(ModelError::InvalidTable(format!(
                "reward table has {} entries, expected {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidTable("non-finite reward".into()));
        }
        Ok(Self {
            alphabet,
            horizon,
            values,
        })
    }

    pub fn get(&self, response: &[u32]) -> f64 {
        self.values[response_index(self.alphabet, response)]
    }

    pub fn range(&self) -> (f64, f64) {
        min_max(self.values.iter().copied())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// A tabular process reward: one score per `(prefix, next symbol)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPrm {
    alphabet: usize,
    entries: BTreeMap<Vec<u32>, Vec<f64>>,
    range: (f64, f64),
}

impl TabularPrm {
    pub fn new(
        alphabet: usize,
        entries: BTreeMap<Vec<u32>, Vec<f64>>,
        range: (f64, f64),
    ) -> Result<Self, ModelError> {
        if range.0 > range.1 {
            return Err(ModelError::InvalidTable("empty reward range".into()));
        }
        for (prefix, row) in &entries {
            if row.len() != alphabet {
                return Err(ModelError::InvalidTable(format!(
                    "PRM row for {prefix:?} has {} entries",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(range.0..=range.1).contains(*v)) {
                return Err(ModelError::InvalidTable(format!(
                    "PRM entry {v} outside [{}, {}]",
                    range.0, range.1
                )));
            }
        }
        Ok(Self {
            alphabet,
            entries,
            range,
        })
    }

    /// Builds a PRM whose declared range is the span of its entries.
    pub fn with_tight_range(
        alphabet: usize,
        entries: BTreeMap<Vec<u32>, Vec<f64>>,
    ) -> Result<Self, ModelError> {
        let range = min_max(entries.values().flatten().copied());
        let range = if range.0 > range.1 { (0.0, 0.0) } else { range };
        Self::new(alphabet, entries, range)
    }

    /// The outcome reward used directly as a last-step PRM.
    pub fn from_outcome(reward: &ResponseReward) -> Result<Self, ModelError> {
        let mut entries = BTreeMap::new();
        for prefix in enumerate_responses(reward.alphabet, reward.horizon - 1) {
            let row = (0..reward.alphabet as u32)
                .map(|s| {
                    let mut r = prefix.clone();
                    r.push(s);
                    reward.get(&r)
                })
                .collect();
            entries.insert(prefix, row);
        }
        Self::with_tight_range(reward.alphabet, entries)
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn entries(&self) -> &BTreeMap<Vec<u32>, Vec<f64>> {
        &self.entries
    }

    pub fn get(&self, prefix: &[u32], sym: u32) -> Result<f64, ModelError> {
        let row = self
            .entries
            .get(prefix)
            .ok_or_else(|| ModelError::InvalidPrefix(prefix.to_vec()))?;
        row.get(sym as usize).copied().ok_or(ModelError::InvalidBlock)
    }

    /// `max |self - other|` over shared entries.
    pub fn sup_distance(&self, other: &TabularPrm) -> f64 {
        self.entries
            .iter()
            .filter_map(|(k, a)| other.entries.get(k).map(|b| (a, b)))
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

impl RewardModel for TabularPrm {
    fn score(&self, trace: &BlockTrace, candidate: &Block) -> Result<f64, ModelError> {
        let prefix = trace.symbols().ok_or(ModelError::InvalidBlock)?;
        let sym = candidate.as_symbol().ok_or(ModelError::InvalidBlock)?;
        self.get(&prefix, sym)
    }

    fn reward_range(&self) -> (f64, f64) {
        self.range
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// Uniform on `[-epsilon, epsilon]`; the sup-norm bound holds exactly.
    UniformBounded,
    /// i.i.d. `N(0, sigma^2)` per entry.
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub epsilon: f64,
    pub noise: NoiseKind,
}

/// Adds independent noise to every PRM entry.
///
/// The declared range is widened to cover the perturbed entries.
pub fn perturb_prm(
    prm: &TabularPrm,
    cfg: &PerturbationConfig,
    rng: &mut dyn RngCore,
) -> Result<TabularPrm, ModelError> {
    if cfg.epsilon.is_nan() || cfg.epsilon < 0.0 {
        return Err(ModelError::InvalidTable(format!("epsilon {} < 0", cfg.epsilon)));
    }
    let gaussian = match cfg.noise {
        NoiseKind::Gaussian { sigma } => Some(
            Normal::new(0.0, sigma)
                .map_err(|e| ModelError::InvalidTable(format!("gaussian sigma: {e}")))?,
        ),
        NoiseKind::UniformBounded => None,
    };
    let mut entries = prm.entries.clone();
    for row in entries.values_mut() {
        for v in row.iter_mut() {
            let z = match &gaussian {
                Some(normal) => normal.sample(rng),
                None if cfg.epsilon == 0.0 => 0.0,
                None => rng.random_range(-cfg.epsilon..=cfg.epsilon),
            };
            *v += z;
        }
    }
    let (lo, hi) = min_max(entries.values().flatten().copied());
    let range = (prm.range.0.min(lo), prm.range.1.max(hi));
    TabularPrm::new(prm.alphabet, entries, range)
}

/// Fixed per-call delays added in front of a model, for latency experiments
/// with toy models.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    #[serde(default)]
    pub sample_ms: f64,
    #[serde(default)]
    pub logprob_ms: f64,
    #[serde(default)]
    pub score_ms: f64,
}

fn pause(ms: f64) {
    if ms > 0.0 {
        thread::sleep(Duration::from_secs_f64(ms / 1000.0));
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedLatency<M> {
    pub inner: M,
    pub profile: LatencyProfile,
}

impl<M> SimulatedLatency<M> {
    pub fn new(inner: M, profile: LatencyProfile) -> Self {
        Self { inner, profile }
    }
}

impl<M: GeneratorModel> GeneratorModel for SimulatedLatency<M> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn sample_block(&self, t: &BlockTrace, g: usize, rng: &mut dyn RngCore) -> Result<Block, ModelError> {
        pause(self.profile.sample_ms);
        self.inner.sample_block(t, g, rng)
    }
    fn block_logprob(&self, t: &BlockTrace, b: &Block) -> Result<f64, ModelError> {
        pause(self.profile.logprob_ms);
        self.inner.block_logprob(t, b)
    }
    fn enumerate_blocks(&self, t: &BlockTrace) -> Option<Result<Vec<(Block, f64)>, ModelError>> {
        self.inner.enumerate_blocks(t)
    }
}

impl<M: RewardModel> RewardModel for SimulatedLatency<M> {
    fn score(&self, t: &BlockTrace, c: &Block) -> Result<f64, ModelError> {
        pause(self.profile.score_ms);
        self.inner.score(t, c)
    }
    fn reward_range(&self) -> (f64, f64) {
        self.inner.reward_range()
    }
}
