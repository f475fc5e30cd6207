//! The switching meta-loop, its baselines and ablations.
//!
//! All methods share one loop: per step, pick a generator, draw candidate
//! blocks, score them, keep one, and update the generator choice. Methods
//! differ only in how the generator is picked, how candidates are scored, and
//! how one is kept.
//!
//! "Beam search" here keeps a single trace and takes the best of `n`
//! candidates at every step; there is no multi-beam frontier.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{GeneratorModel, ModelError, RewardModel};
use crate::rng::{substream, Lane};
use crate::selection::{
    compute_scores, fan_out, select_best, subsample, CandidateSet, ScoreMode, SelectionError,
};
use crate::trace::{
    percent_big, Block, BlockTrace, ConfigError, EpisodeResult, GenerationSource, RunConfig,
    TraceError, BeamMode,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("invalid method: {0}")]
    InvalidMethod(String),
}

/// A decoding method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodSpec {
    /// Start on the target, switch to the draft once a candidate beats `tau`.
    Specs,
    /// Start on the draft, switch to the target once no candidate beats `tau`.
    SpecsDraftStart,
    /// Specs with the log-likelihood ratio dropped from the score.
    #[serde(rename = "specs_no_ll")]
    SpecsNoLL,
    /// Best-of-`n` by PRM from a single model.
    BeamSearch { source: GenerationSource },
    /// Best-of-`n` draft, falling back to best-of-`n` target below the threshold.
    RsdPlusPlus,
    /// Soft selection with the generator drawn per step, target w.p. `p_big`.
    RandomSwitch { p_big: f64 },
    /// Soft selection from the draft only.
    OnlySmallGen,
}

impl MethodSpec {
    pub fn validate(&self) -> Result<(), EngineError> {
        match self {
            MethodSpec::RandomSwitch { p_big } if !(0.0..=1.0).contains(p_big) => Err(
                EngineError::InvalidMethod(format!("p_big must lie in [0, 1], got {p_big}")),
            ),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodSpec::Specs => write!(f, "specs"),
            MethodSpec::SpecsDraftStart => write!(f, "specs_draft_start"),
            MethodSpec::SpecsNoLL => write!(f, "specs_no_ll"),
            MethodSpec::BeamSearch { source: GenerationSource::Target } => {
                write!(f, "beam_search(target)")
            }
            MethodSpec::BeamSearch { source: GenerationSource::Draft } => {
                write!(f, "beam_search(draft)")
            }
            MethodSpec::RsdPlusPlus => write!(f, "rsd++"),
            MethodSpec::RandomSwitch { p_big } => write!(f, "random_switch({p_big})"),
            MethodSpec::OnlySmallGen => write!(f, "only_small_gen"),
        }
    }
}

/// Parses the [`Display`](fmt::Display) form, e.g. `specs`,
/// `beam_search(target)`, `random_switch(0.4)`. `random_switch` without an
/// argument yields `p_big = NaN`, to be filled in by the caller.
impl FromStr for MethodSpec {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase().replace('-', "_");
        let (head, arg) = match t.split_once('(') {
            Some((h, rest)) => (
                h.trim().to_string(),
                Some(
                    rest.strip_suffix(')')
                        .ok_or_else(|| EngineError::InvalidMethod(s.into()))?
                        .trim()
                        .to_string(),
                ),
            ),
            None => (t.clone(), None),
        };
        let m = match (head.as_str(), arg.as_deref()) {
            ("specs", None) => MethodSpec::Specs,
            ("specs_draft_start", None) => MethodSpec::SpecsDraftStart,
            ("specs_no_ll", None) => MethodSpec::SpecsNoLL,
            ("beam_search", Some("target")) => MethodSpec::BeamSearch {
                source: GenerationSource::Target,
            },
            ("beam_search", Some("draft")) => MethodSpec::BeamSearch {
                source: GenerationSource::Draft,
            },
            ("rsd++" | "rsd_plus_plus", None) => MethodSpec::RsdPlusPlus,
            ("random_switch", None) => MethodSpec::RandomSwitch { p_big: f64::NAN },
            ("random_switch", Some(p)) => MethodSpec::RandomSwitch {
                p_big: p.parse().map_err(|_| EngineError::InvalidMethod(s.into()))?,
            },
            ("only_small_gen", None) => MethodSpec::OnlySmallGen,
            _ => return Err(EngineError::InvalidMethod(s.into())),
        };
        Ok(m)
    }
}

/// Time spent in each component during one step, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLatency {
    pub draft_generate: f64,
    pub target_generate: f64,
    /// Likelihood evaluation used in the score (target and generator).
    pub target_score: f64,
    pub prm_score: f64,
    pub wall_step: f64,
}

impl StepLatency {
    pub fn component_sum(&self) -> f64 {
        self.draft_generate + self.target_generate + self.target_score + self.prm_score
    }
}

/// Whether candidate generation and scoring fan out across threads.
///
/// Results are identical in both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Concurrent,
}

/// A draft/target/PRM triple driving episodes.
#[derive(Clone, Copy)]
pub struct Engine<'a> {
    pub draft: &'a dyn GeneratorModel,
    pub target: &'a dyn GeneratorModel,
    pub prm: &'a dyn RewardModel,
    pub execution: Execution,
}

/// How one batch of candidates is turned into a kept block.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Keep {
    Soft(ScoreMode),
    Best,
}

struct Batch {
    set: CandidateSet,
    chosen: usize,
}

impl<'a> Engine<'a> {
    pub fn new(
        draft: &'a dyn GeneratorModel,
        target: &'a dyn GeneratorModel,
        prm: &'a dyn RewardModel,
    ) -> Self {
        Self {
            draft,
            target,
            prm,
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    fn concurrent(&self) -> bool {
        self.execution == Execution::Concurrent
    }

    fn model(&self, source: GenerationSource) -> &'a dyn GeneratorModel {
        match source {
            GenerationSource::Target => self.target,
            GenerationSource::Draft => self.draft,
        }
    }

    /// Runs one episode of `method`; all randomness derives from `cfg.seed`.
    pub fn run(
        &self,
        method: MethodSpec,
        prompt: &str,
        cfg: &RunConfig,
    ) -> Result<EpisodeResult, EngineError> {
        cfg.validate()?;
        method.validate()?;
        let mut trace = BlockTrace::new(prompt);
        let mut result = EpisodeResult {
            trace: BlockTrace::new(prompt),
            per_step_latency: Vec::new(),
            percent_big: 0.0,
            selected_scores: Vec::new(),
            step_rewards: Vec::new(),
            widths: Vec::new(),
        };
        let mut source = match method {
            MethodSpec::SpecsDraftStart | MethodSpec::OnlySmallGen => GenerationSource::Draft,
            MethodSpec::BeamSearch { source } => source,
            MethodSpec::RsdPlusPlus => GenerationSource::Draft,
            _ => GenerationSource::Target,
        };
        let mut step: u64 = 0;
        while !trace.is_complete(cfg) {
            let start = Instant::now();
            let mut lat = StepLatency::default();
            let width = self.width(cfg, step);

            if let MethodSpec::RandomSwitch { p_big } = method {
                let u: f64 = substream(cfg.seed, step, Lane::Switch, 0).random();
                source = if u < p_big {
                    GenerationSource::Target
                } else {
                    GenerationSource::Draft
                };
            }
            let keep = match method {
                MethodSpec::BeamSearch { .. } | MethodSpec::RsdPlusPlus => Keep::Best,
                MethodSpec::SpecsNoLL => Keep::Soft(ScoreMode::RewardOnly),
                _ => Keep::Soft(ScoreMode::Full),
            };

            let mut batch = self.batch(&trace, cfg, step, Lane::Candidate, source, width, keep, &mut lat)?;
            let mut drawn = width;
            let mut kept_source = source;
            if method == MethodSpec::RsdPlusPlus
                && batch.set.candidates[batch.chosen].prm_score < cfg.rsd_threshold
            {
                batch = self.batch(
                    &trace,
                    cfg,
                    step,
                    Lane::Fallback,
                    GenerationSource::Target,
                    width,
                    keep,
                    &mut lat,
                )?;
                drawn += width;
                kept_source = GenerationSource::Target;
            }

            let max_prm = batch.set.max_prm();
            let scores = batch.set.scores();
            let chosen = batch.set.candidates.swap_remove(batch.chosen);
            trace.push(chosen.block, kept_source)?;
            result.step_rewards.push(chosen.prm_score);
            result.selected_scores.push(scores);
            result.widths.push(drawn);

            match method {
                MethodSpec::Specs | MethodSpec::SpecsNoLL
                    if source == GenerationSource::Target && max_prm > cfg.tau =>
                {
                    source = GenerationSource::Draft;
                }
                MethodSpec::SpecsDraftStart
                    if source == GenerationSource::Draft && max_prm <= cfg.tau =>
                {
                    source = GenerationSource::Target;
                }
                _ => {}
            }

            lat.wall_step = start.elapsed().as_secs_f64();
            result.per_step_latency.push(lat);
            step += 1;
        }
        result.percent_big = percent_big(&trace);
        result.trace = trace;
        Ok(result)
    }

    /// SPECS: start on the target, switch to the draft once any candidate's
    /// PRM exceeds `tau`.
    pub fn run_specs(&self, prompt: &str, cfg: &RunConfig) -> Result<EpisodeResult, EngineError> {
        self.run(MethodSpec::Specs, prompt, cfg)
    }

    pub fn run_beam_search(
        &self,
        source: GenerationSource,
        prompt: &str,
        cfg: &RunConfig,
    ) -> Result<EpisodeResult, EngineError> {
        self.run(MethodSpec::BeamSearch { source }, prompt, cfg)
    }

    pub fn run_rsd_plus_plus(&self, prompt: &str, cfg: &RunConfig) -> Result<EpisodeResult, EngineError> {
        self.run(MethodSpec::RsdPlusPlus, prompt, cfg)
    }

    fn width(&self, cfg: &RunConfig, step: u64) -> usize {
        match cfg.beam_mode {
            BeamMode::Fixed => cfg.n,
            BeamMode::PoissonTruncated => {
                let mut rng = substream(cfg.seed, step, Lane::Width, 0);
                let poisson = Poisson::new(cfg.n as f64).expect("n >= 1 is a valid Poisson mean");
                loop {
                    let k = poisson.sample(&mut rng) as usize;
                    if k > 0 {
                        return k;
                    }
                }
            }
        }
    }

    fn generate(
        &self,
        trace: &BlockTrace,
        cfg: &RunConfig,
        step: u64,
        lane: Lane,
        source: GenerationSource,
        width: usize,
    ) -> Result<Vec<Block>, ModelError> {
        let model = self.model(source);
        let one = |i: usize| {
            let mut rng = substream(cfg.seed, step, lane, i as u64);
            model.sample_block(trace, cfg.gamma, &mut rng)
        };
        let idx: Vec<usize> = (0..width).collect();
        fan_out(&idx, self.concurrent(), |&i| one(i))
    }

    #[allow(clippy::too_many_arguments)]
    fn batch(
        &self,
        trace: &BlockTrace,
        cfg: &RunConfig,
        step: u64,
        lane: Lane,
        source: GenerationSource,
        width: usize,
        keep: Keep,
        lat: &mut StepLatency,
    ) -> Result<Batch, EngineError> {
        let t = Instant::now();
        let blocks = self.generate(trace, cfg, step, lane, source, width)?;
        let gen_secs = t.elapsed().as_secs_f64();
        match source {
            GenerationSource::Target => lat.target_generate += gen_secs,
            GenerationSource::Draft => lat.draft_generate += gen_secs,
        }
        // Best-of-n only needs the PRM.
        let mode = match keep {
            Keep::Soft(mode) => mode,
            Keep::Best => ScoreMode::RewardOnly,
        };
        let (set, timing) = compute_scores(
            trace,
            blocks,
            source,
            self.model(source),
            self.target,
            self.prm,
            cfg.beta,
            mode,
            self.concurrent(),
        )?;
        match (mode, source) {
            (ScoreMode::Full, _) => lat.target_score += timing.likelihood,
            (ScoreMode::RewardOnly, GenerationSource::Target) => lat.target_generate += timing.likelihood,
            (ScoreMode::RewardOnly, GenerationSource::Draft) => lat.draft_generate += timing.likelihood,
        }
        lat.prm_score += timing.prm;
        let outcome = match keep {
            Keep::Soft(_) => {
                let select_lane_index = if lane == Lane::Fallback { 1 } else { 0 };
                subsample(&set, &mut substream(cfg.seed, step, Lane::Select, select_lane_index))?
            }
            Keep::Best => select_best(&set)?,
        };
        Ok(Batch {
            set,
            chosen: outcome.chosen_index,
        })
    }
}
