//! Speculative block-level test-time scaling.
//!
//! A reasoning trace is grown one block at a time. At each step `n` candidate
//! blocks are drawn from a generator model (the large target model at first,
//! later a cheap draft model), scored by the target model and a process reward
//! model, and one of them is soft-selected with probability proportional to
//! `exp(S_i)` where
//!
//! ```text
//! S_i = ln(pi_target(Y_i | tr) / pi_gen(Y_i | tr)) + beta * r(Y_i | tr)
//! ```
//!
//! Generation switches permanently to the draft model once any candidate's
//! reward exceeds a threshold `tau`.
//!
//! The crate is organised as:
//!
//! * [`trace`]: blocks, traces, run configuration and episode results.
//! * [`policy`]: generator/reward model traits and exact tabular models.
//! * [`selection`]: the score function and the soft selection step.
//! * [`engine`]: the switching meta-loop, baselines and ablations.
//! * [`oracle`]: exact reference computations on finite instances (tilted
//!   policies, value functions, exact SMC output distributions, divergences).
//! * [`instance`] and [`fixtures`]: the toy instance file format and the
//!   bundled instances.

pub mod engine;
pub mod fixtures;
pub mod instance;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod selection;
pub mod trace;

pub use engine::{Engine, EngineError, Execution, MethodSpec, StepLatency};
pub use instance::{InstanceError, InstanceFile, ToyInstance};
pub use policy::{
    GeneratorModel, ModelError, PerturbationConfig, ResponseReward, RewardModel, TabularPolicy,
    TabularPrm,
};
pub use selection::{CandidateSet, ScoreMode, SelectionError, SelectionOutcome};
pub use trace::{
    BeamMode, Block, BlockTrace, ConfigError, EpisodeResult, GenerationSource, RunConfig,
    ScoredCandidate, Token, TraceError,
};
