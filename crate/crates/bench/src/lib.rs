//! Shared inputs for the benchmarks.

use specs_core::selection::CandidateSet;
use specs_core::{BeamMode, Block, BlockTrace, GenerationSource, RunConfig, ScoredCandidate};

/// `n` candidates with scores spread over [-2, 2).
pub fn candidate_set(n: usize) -> CandidateSet {
    CandidateSet {
        context: BlockTrace::new("bench"),
        candidates: (0..n)
            .map(|i| ScoredCandidate {
                block: Block::symbol(i as u32),
                logp_gen: -1.0,
                logp_target: Some(-1.2),
                prm_score: 0.5,
                score: 4.0 * ((i * 37 % 101) as f64 / 101.0) - 2.0,
            })
            .collect(),
        generator: GenerationSource::Draft,
        beta: 1.0,
    }
}

pub fn run_config(n: usize, horizon: usize, seed: u64) -> RunConfig {
    RunConfig {
        n,
        gamma: 1,
        tau: 0.0,
        beta: 1.0,
        horizon,
        token_budget: horizon,
        beam_mode: BeamMode::Fixed,
        seed,
        rsd_threshold: 0.7,
    }
}
