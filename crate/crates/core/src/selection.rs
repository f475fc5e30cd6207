//! Candidate scoring and soft selection.
//!
//! Each candidate `Y_i` drawn from the generator receives the score
//! `S_i = (ln pi_target(Y_i) - ln pi_gen(Y_i)) + beta * r(Y_i)` and one
//! candidate is drawn with probability `softmax(S)_i`. All arithmetic stays in
//! the log domain; `beta * r` reaches the thousands for realistic settings.

use std::time::Instant;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{GeneratorModel, ModelError, RewardModel};
use crate::trace::{Block, BlockTrace, GenerationSource, ScoredCandidate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How candidate scores are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Log density ratio plus the tilted reward.
    #[default]
    Full,
    /// Tilted reward only; the target model is never queried.
    RewardOnly,
}

/// The candidates of one step, all sharing the same context and `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub context: BlockTrace,
    pub candidates: Vec<ScoredCandidate>,
    pub generator: GenerationSource,
    pub beta: f64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.score).collect()
    }

    pub fn max_prm(&self) -> f64 {
        self.candidates
            .iter()
            .map(|c| c.prm_score)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub chosen_index: usize,
    pub selection_probabilities: Vec<f64>,
    pub max_prm: f64,
}

/// Wall time spent in each scoring branch, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScoreTiming {
    /// Generator and target log-likelihood evaluation.
    pub likelihood: f64,
    pub prm: f64,
}

fn combine(logp_target: f64, logp_gen: f64, beta: f64, prm: f64) -> f64 {
    let ratio = logp_target - logp_gen;
    let s = ratio + beta * prm;
    if s.is_nan() {
        // -inf - -inf: the candidate has no support under either model.
        f64::NEG_INFINITY
    } else {
        s
    }
}

/// Maps `f` over `items`, one scoped thread per item when `concurrent`.
///
/// Model calls block on I/O or simulated delay, so they get their own
/// threads rather than a share of a caller's (possibly single-thread) pool.
pub fn fan_out<T, R, F>(items: &[T], concurrent: bool, f: F) -> Result<Vec<R>, ModelError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R, ModelError> + Sync,
{
    if !concurrent || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = items.iter().map(|x| s.spawn(|| f(x))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
            .collect()
    })
}

/// Evaluates every candidate under the generator, the target and the PRM.
///
/// With `concurrent` set, the likelihood branch and the PRM branch run in
/// parallel (and fan out per candidate); the result is identical to the
/// sequential evaluation.
#[allow(clippy::too_many_arguments)]
pub fn compute_scores(
    context: &BlockTrace,
    blocks: Vec<Block>,
    generator: GenerationSource,
    gen: &dyn GeneratorModel,
    target: &dyn GeneratorModel,
    prm: &dyn RewardModel,
    beta: f64,
    mode: ScoreMode,
    concurrent: bool,
) -> Result<(CandidateSet, ScoreTiming), SelectionError> {
    if blocks.is_empty() {
        return Err(SelectionError::EmptyCandidateSet);
    }
    let likelihoods = || {
        let start = Instant::now();
        let r = fan_out(&blocks, concurrent, |b| {
            let logp_gen = match b.sampled_logprob() {
                Some(lp) => lp,
                None => gen.block_logprob(context, b)?,
            };
            let logp_target = match (mode, generator) {
                (ScoreMode::RewardOnly, _) => None,
                (ScoreMode::Full, GenerationSource::Target) => Some(logp_gen),
                (ScoreMode::Full, GenerationSource::Draft) => {
                    Some(target.block_logprob(context, b)?)
                }
            };
            Ok((logp_gen, logp_target))
        });
        (r, start.elapsed().as_secs_f64())
    };
    let rewards = || {
        let start = Instant::now();
        let r = fan_out(&blocks, concurrent, |b| prm.score(context, b));
        (r, start.elapsed().as_secs_f64())
    };
    let ((lik, lik_secs), (rew, rew_secs)) = if concurrent {
        std::thread::scope(|s| {
            let lik = s.spawn(likelihoods);
            let rew = rewards();
            (lik.join().unwrap_or_else(|e| std::panic::resume_unwind(e)), rew)
        })
    } else {
        let a = likelihoods();
        let b = rewards();
        (a, b)
    };
    let lik = lik?;
    let rew = rew?;
    let candidates = blocks
        .into_iter()
        .zip(lik)
        .zip(rew)
        .map(|((block, (logp_gen, logp_target)), prm_score)| {
            let score = match logp_target {
                Some(lt) => combine(lt, logp_gen, beta, prm_score),
                None => beta * prm_score,
            };
            ScoredCandidate {
                block,
                logp_gen,
                logp_target,
                prm_score,
                score,
            }
        })
        .collect();
    Ok((
        CandidateSet {
            context: context.clone(),
            candidates,
            generator,
            beta,
        },
        ScoreTiming {
            likelihood: lik_secs,
            prm: rew_secs,
        },
    ))
}

/// Numerically stable softmax; all `-inf` (or NaN) scores fall back to uniform.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let clean = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    let m = scores.iter().copied().map(clean).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return vec![1.0 / scores.len() as f64; scores.len()];
    }
    if m == f64::INFINITY {
        // Infinite scores share all the mass.
        let k = scores.iter().filter(|s| **s == f64::INFINITY).count() as f64;
        return scores
            .iter()
            .map(|s| if *s == f64::INFINITY { 1.0 / k } else { 0.0 })
            .collect();
    }
    let w: Vec<f64> = scores.iter().map(|s| (clean(*s) - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// The exact selection distribution used by [`subsample`].
pub fn selection_distribution(set: &CandidateSet) -> Result<Vec<f64>, SelectionError> {
    if set.is_empty() {
        return Err(SelectionError::EmptyCandidateSet);
    }
    Ok(softmax(&set.scores()))
}

/// Draws an index from a probability vector with a single uniform.
pub fn draw_index(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Samples one candidate with probability proportional to `exp(S_i)`.
pub fn subsample(set: &CandidateSet, rng: &mut dyn RngCore) -> Result<SelectionOutcome, SelectionError> {
    let probs = selection_distribution(set)?;
    let chosen_index = draw_index(&probs, rng);
    Ok(SelectionOutcome {
        chosen_index,
        selection_probabilities: probs,
        max_prm: set.max_prm(),
    })
}

/// Keeps the candidate with the highest PRM score; ties go to the lowest index.
pub fn select_best(set: &CandidateSet) -> Result<SelectionOutcome, SelectionError> {
    if set.is_empty() {
        return Err(SelectionError::EmptyCandidateSet);
    }
    let mut best = 0;
    for (i, c) in set.candidates.iter().enumerate() {
        if c.prm_score > set.candidates[best].prm_score {
            best = i;
        }
    }
    let mut probs = vec![0.0; set.len()];
    probs[best] = 1.0;
    Ok(SelectionOutcome {
        chosen_index: best,
        selection_probabilities: probs,
        max_prm: set.max_prm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::rng::{substream, Lane};
    use proptest::prelude::*;

    fn set_from_scores(scores: &[f64]) -> CandidateSet {
        CandidateSet {
            context: BlockTrace::new("x"),
            candidates: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| ScoredCandidate {
                    block: Block::symbol(i as u32),
                    logp_gen: 0.0,
                    logp_target: Some(0.0),
                    prm_score: 0.0,
                    score: s,
                })
                .collect(),
            generator: GenerationSource::Target,
            beta: 1.0,
        }
    }

    #[test]
    fn t1_draft_candidate_score_is_ln2() {
        let inst = fixtures::t1();
        let (set, _) = compute_scores(
            &BlockTrace::new("x"),
            vec![Block::symbol(1)],
            GenerationSource::Draft,
            &inst.draft,
            &inst.target,
            &inst.prm,
            1.0,
            ScoreMode::Full,
            false,
        )
        .unwrap();
        let c = &set.candidates[0];
        // ln(0.2 / 0.4) + ln 4 = ln 2
        assert!((c.score - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn target_generator_collapses_to_tilted_reward() {
        let inst = fixtures::t1();
        for beta in [0.0, 0.5, 1.0, 7.0] {
            let (set, _) = compute_scores(
                &BlockTrace::new("x"),
                vec![Block::symbol(0), Block::symbol(1)],
                GenerationSource::Target,
                &inst.target,
                &inst.target,
                &inst.prm,
                beta,
                ScoreMode::Full,
                false,
            )
            .unwrap();
            for c in &set.candidates {
                assert_eq!(c.score, beta * c.prm_score);
                assert_eq!(c.logp_target, Some(c.logp_gen));
            }
        }
    }

    #[test]
    fn zero_beta_keeps_only_density_ratio() {
        let inst = fixtures::t1();
        let (set, _) = compute_scores(
            &BlockTrace::new("x"),
            vec![Block::symbol(0), Block::symbol(1)],
            GenerationSource::Draft,
            &inst.draft,
            &inst.target,
            &inst.prm,
            0.0,
            ScoreMode::Full,
            false,
        )
        .unwrap();
        assert!((set.candidates[0].score - (0.8f64 / 0.6).ln()).abs() < 1e-12);
        assert!((set.candidates[1].score - (0.2f64 / 0.4).ln()).abs() < 1e-12);
    }

    #[test]
    fn concurrent_scoring_matches_sequential() {
        let inst = fixtures::t2();
        let blocks: Vec<Block> = (0..16).map(|i| Block::symbol(i % 2)).collect();
        let run = |conc| {
            compute_scores(
                &BlockTrace::new("x"),
                blocks.clone(),
                GenerationSource::Draft,
                &inst.draft,
                &inst.target,
                &inst.prm,
                2.0,
                ScoreMode::Full,
                conc,
            )
            .unwrap()
            .0
        };
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn empty_blocks_rejected() {
        let inst = fixtures::t1();
        let r = compute_scores(
            &BlockTrace::new("x"),
            vec![],
            GenerationSource::Target,
            &inst.target,
            &inst.target,
            &inst.prm,
            1.0,
            ScoreMode::Full,
            false,
        );
        assert_eq!(r.unwrap_err(), SelectionError::EmptyCandidateSet);
        assert_eq!(
            subsample(&set_from_scores(&[]), &mut substream(0, 0, Lane::Select, 0)).unwrap_err(),
            SelectionError::EmptyCandidateSet
        );
    }

    #[test]
    fn single_candidate_always_chosen() {
        let set = set_from_scores(&[-3.0]);
        let out = subsample(&set, &mut substream(0, 0, Lane::Select, 0)).unwrap();
        assert_eq!(out.chosen_index, 0);
        assert_eq!(out.selection_probabilities, vec![1.0]);
    }

    #[test]
    fn known_distributions() {
        let p = selection_distribution(&set_from_scores(&[0.0, 4f64.ln()])).unwrap();
        assert!((p[0] - 0.2).abs() < 1e-12 && (p[1] - 0.8).abs() < 1e-12);
        let p = selection_distribution(&set_from_scores(&[1.5, 1.5, 1.5])).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = selection_distribution(&set_from_scores(&[0.0, f64::NEG_INFINITY])).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        let p = selection_distribution(&set_from_scores(&[f64::NEG_INFINITY; 4])).unwrap();
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn huge_scores_do_not_overflow() {
        let p = softmax(&[8192.0, 8191.0]);
        let e = 1.0f64.exp();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn identical_candidates_split_evenly() {
        let set = set_from_scores(&[0.7, 0.7]);
        let mut rng = substream(11, 0, Lane::Select, 0);
        let draws = 100_000;
        let first = (0..draws)
            .filter(|_| subsample(&set, &mut rng).unwrap().chosen_index == 0)
            .count();
        assert!((first as f64 / draws as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn best_of_n_tie_goes_to_lowest_index() {
        let mut set = set_from_scores(&[0.0, 0.0, 0.0]);
        for (c, r) in set.candidates.iter_mut().zip([0.3, 0.9, 0.9]) {
            c.prm_score = r;
        }
        let out = select_best(&set).unwrap();
        assert_eq!(out.chosen_index, 1);
        assert_eq!(out.max_prm, 0.9);
    }

    proptest! {
        #[test]
        fn shift_invariance(scores in prop::collection::vec(-50.0f64..50.0, 1..12), c in -1e3f64..1e3) {
            let a = softmax(&scores);
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let b = softmax(&shifted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn distribution_is_normalised(scores in prop::collection::vec(prop_oneof![Just(f64::NEG_INFINITY), -100.0f64..100.0], 1..12)) {
            let p = softmax(&scores);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for (s, q) in scores.iter().zip(&p) {
                if *s == f64::NEG_INFINITY && scores.iter().any(|x| x.is_finite()) {
                    prop_assert_eq!(*q, 0.0);
                }
            }
        }
    }
}
