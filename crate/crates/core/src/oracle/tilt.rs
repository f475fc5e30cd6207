//! The tilted optimum, KL-regularised values and the advantage PRM.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{compose_rows, divergences, logsumexp, OracleError};
use crate::policy::{
    enumerate_prefixes, enumerate_responses, ModelError, ResponseReward, TabularPolicy, TabularPrm,
};

fn check_beta(beta: f64) -> Result<(), OracleError> {
    if beta.is_finite() && beta >= 0.0 {
        Ok(())
    } else {
        Err(OracleError::BadInput(format!("beta must be finite and >= 0, got {beta}")))
    }
}

fn check_shape(policy: &TabularPolicy, reward: &ResponseReward) -> Result<(), OracleError> {
    if policy.alphabet() != reward.alphabet || policy.horizon() != reward.horizon {
        return Err(OracleError::BadInput("policy and reward shapes differ".into()));
    }
    Ok(())
}

/// `pi*(y) = pi_target(y) exp(beta r(y)) / Z`, over full responses and per prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedPolicy {
    pub alphabet: usize,
    pub horizon: usize,
    /// Response probabilities in [`enumerate_responses`] order.
    pub probs: Vec<f64>,
    pub log_z: f64,
    /// Next-symbol conditionals of `pi*` for every prefix shorter than the horizon.
    pub rows: BTreeMap<Vec<u32>, Vec<f64>>,
}

impl TiltedPolicy {
    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }

    pub fn prob(&self, response: &[u32]) -> f64 {
        self.probs[crate::policy::response_index(self.alphabet, response)]
    }
}

pub fn tilted_policy(
    target: &TabularPolicy,
    reward: &ResponseReward,
    beta: f64,
) -> Result<TiltedPolicy, OracleError> {
    check_beta(beta)?;
    check_shape(target, reward)?;
    let (alphabet, horizon) = (target.alphabet(), target.horizon());
    let base = target.response_distribution()?;
    let logw: Vec<f64> = base
        .iter()
        .zip(&reward.values)
        .map(|(p, r)| if *p > 0.0 { p.ln() + beta * r } else { f64::NEG_INFINITY })
        .collect();
    let log_z = logsumexp(&logw);
    if log_z == f64::NEG_INFINITY {
        return Err(OracleError::DegenerateSupport);
    }
    let probs: Vec<f64> = logw.iter().map(|w| (w - log_z).exp()).collect();

    // Prefix masses, longest first, then conditionals.
    let mut mass: BTreeMap<Vec<u32>, f64> = enumerate_responses(alphabet, horizon)
        .into_iter()
        .zip(probs.iter().copied())
        .collect();
    let prefixes = enumerate_prefixes(alphabet, horizon);
    for p in prefixes.iter().rev() {
        let m = (0..alphabet as u32)
            .map(|s| {
                let mut c = p.clone();
                c.push(s);
                mass[&c]
            })
            .sum();
        mass.insert(p.clone(), m);
    }
    let mut rows = BTreeMap::new();
    for p in prefixes {
        let m = mass[&p];
        let row = if m > 0.0 {
            (0..alphabet as u32)
                .map(|s| {
                    let mut c = p.clone();
                    c.push(s);
                    mass[&c] / m
                })
                .collect()
        } else {
            match target.row(&p) {
                Ok(r) => r.to_vec(),
                Err(_) => vec![1.0 / alphabet as f64; alphabet],
            }
        };
        rows.insert(p, row);
    }
    Ok(TiltedPolicy {
        alphabet,
        horizon,
        probs,
        log_z,
        rows,
    })
}

/// `V(prefix) = (1/beta) ln E[exp(beta r)]` under a policy, for every prefix
/// and every full response.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub beta: f64,
    pub values: BTreeMap<Vec<u32>, f64>,
}

impl ValueTable {
    pub fn get(&self, prefix: &[u32]) -> Option<f64> {
        self.values.get(prefix).copied()
    }
}

/// Exact value function by backward recursion over completions.
///
/// `beta = 0` is the `E[r]` limit. The policy must have a row for every prefix.
pub fn kl_value_function(
    policy: &TabularPolicy,
    reward: &ResponseReward,
    beta: f64,
) -> Result<ValueTable, OracleError> {
    check_beta(beta)?;
    check_shape(policy, reward)?;
    if !policy.is_total() {
        return Err(OracleError::BadInput(
            "value function needs a row for every prefix".into(),
        ));
    }
    let (alphabet, horizon) = (policy.alphabet(), policy.horizon());
    let mut values: BTreeMap<Vec<u32>, f64> = enumerate_responses(alphabet, horizon)
        .into_iter()
        .zip(reward.values.iter().copied())
        .collect();
    for p in enumerate_prefixes(alphabet, horizon).into_iter().rev() {
        let row = policy.row(&p)?;
        let child = |s: usize| {
            let mut c = p.clone();
            c.push(s as u32);
            values[&c]
        };
        let v = if beta == 0.0 {
            row.iter().enumerate().map(|(s, w)| w * child(s)).sum()
        } else {
            let terms: Vec<f64> = row
                .iter()
                .enumerate()
                .map(|(s, w)| if *w > 0.0 { w.ln() + beta * child(s) } else { f64::NEG_INFINITY })
                .collect();
            logsumexp(&terms) / beta
        };
        values.insert(p, v);
    }
    Ok(ValueTable { beta, values })
}

/// `A(prefix, s) = V(prefix + s) - V(prefix)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageTable {
    pub alphabet: usize,
    pub entries: BTreeMap<Vec<u32>, Vec<f64>>,
    pub root_value: f64,
}

impl AdvantageTable {
    pub fn get(&self, prefix: &[u32], sym: u32) -> Option<f64> {
        self.entries.get(prefix).and_then(|r| r.get(sym as usize)).copied()
    }

    pub fn to_prm(&self) -> Result<TabularPrm, ModelError> {
        TabularPrm::with_tight_range(self.alphabet, self.entries.clone())
    }

    /// `max_y |sum_t A(y_t) - (r(y) - V(root))|`.
    pub fn telescoping_error(&self, reward: &ResponseReward) -> f64 {
        enumerate_responses(reward.alphabet, reward.horizon)
            .iter()
            .map(|y| {
                let sum: f64 = (0..y.len())
                    .map(|t| self.get(&y[..t], y[t]).unwrap_or(f64::NAN))
                    .sum();
                (sum - (reward.get(y) - self.root_value)).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub fn idealized_prm(
    target: &TabularPolicy,
    reward: &ResponseReward,
    beta: f64,
) -> Result<AdvantageTable, OracleError> {
    let v = kl_value_function(target, reward, beta)?;
    let alphabet = target.alphabet();
    let entries = enumerate_prefixes(alphabet, target.horizon())
        .into_iter()
        .map(|p| {
            let base = v.values[&p];
            let row = (0..alphabet as u32)
                .map(|s| {
                    let mut c = p.clone();
                    c.push(s);
                    v.values[&c] - base
                })
                .collect();
            (p, row)
        })
        .collect();
    Ok(AdvantageTable {
        alphabet,
        entries,
        root_value: v.values[&Vec::new()],
    })
}

/// Per-prefix `pi_target(s|p) exp(beta prm(p, s))`, normalised.
pub fn block_tilted_rows(
    target: &TabularPolicy,
    prm: &TabularPrm,
    beta: f64,
) -> Result<BTreeMap<Vec<u32>, Vec<f64>>, OracleError> {
    check_beta(beta)?;
    let mut out = BTreeMap::new();
    for (p, row) in target.rows() {
        let logw = row
            .iter()
            .enumerate()
            .map(|(s, w)| {
                Ok(if *w > 0.0 { w.ln() + beta * prm.get(p, s as u32)? } else { f64::NEG_INFINITY })
            })
            .collect::<Result<Vec<f64>, ModelError>>()?;
        let lz = logsumexp(&logw);
        if lz == f64::NEG_INFINITY {
            return Err(OracleError::DegenerateSupport);
        }
        out.insert(p.clone(), logw.iter().map(|w| (w - lz).exp()).collect());
    }
    Ok(out)
}

/// `max_y |pi*(y) - prod_t pi*_t(y_t | y_<t)|` with the per-block tilts built
/// from the idealized PRM.
pub fn product_decomposition_check(
    target: &TabularPolicy,
    reward: &ResponseReward,
    beta: f64,
) -> Result<f64, OracleError> {
    let global = tilted_policy(target, reward, beta)?;
    let prm = idealized_prm(target, reward, beta)?.to_prm()?;
    let rows = block_tilted_rows(target, &prm, beta)?;
    let composed = compose_rows(&rows, target.alphabet(), target.horizon())?;
    Ok(global
        .probs
        .iter()
        .zip(&composed)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// `E_pi[r] - (1/beta) KL(pi || pi_target)` for a distribution over full responses.
pub fn kl_objective(
    pi: &[f64],
    target: &TabularPolicy,
    reward: &ResponseReward,
    beta: f64,
) -> Result<f64, OracleError> {
    check_shape(target, reward)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(OracleError::BadInput(format!("objective needs beta > 0, got {beta}")));
    }
    let base = target.response_distribution()?;
    let kl = divergences(pi, &base)?.kl;
    let er: f64 = pi.iter().zip(&reward.values).map(|(p, r)| p * r).sum();
    Ok(er - kl / beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveGap {
    /// `L(pi*) - L(pi)`.
    pub gap: f64,
    /// `KL(pi || pi*) / beta`.
    pub scaled_kl: f64,
    pub error: f64,
}

pub fn objective_gap(
    pi: &[f64],
    target: &TabularPolicy,
    reward: &ResponseReward,
    beta: f64,
) -> Result<ObjectiveGap, OracleError> {
    let star = tilted_policy(target, reward, beta)?;
    let gap = kl_objective(&star.probs, target, reward, beta)? - kl_objective(pi, target, reward, beta)?;
    let scaled_kl = divergences(pi, &star.probs)?.kl / beta;
    Ok(ObjectiveGap {
        gap,
        scaled_kl,
        error: (gap - scaled_kl).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisspecReport {
    /// `sup_y |prm_noisy - prm_exact|` over shared entries.
    pub epsilon: f64,
    pub sup_block_log_ratio: f64,
    pub block_bound: f64,
    pub sup_response_log_ratio: f64,
    pub response_bound: f64,
}

impl MisspecReport {
    pub fn holds(&self) -> bool {
        self.sup_block_log_ratio <= self.block_bound + 1e-12
            && self.sup_response_log_ratio <= self.response_bound + 1e-12
    }
}

fn sup_log_ratio(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, y)| **x > 0.0 || **y > 0.0)
        .map(|(x, y)| (x.ln() - y.ln()).abs())
        .fold(0.0, f64::max)
}

/// Compares per-block tilts built from an exact and a perturbed PRM against
/// the `2 beta eps` (per block) and `2 beta H eps` (per response) bounds.
pub fn misspecification_bound_check(
    target: &TabularPolicy,
    beta: f64,
    exact: &TabularPrm,
    noisy: &TabularPrm,
) -> Result<MisspecReport, OracleError> {
    let epsilon = exact.sup_distance(noisy);
    let a = block_tilted_rows(target, exact, beta)?;
    let b = block_tilted_rows(target, noisy, beta)?;
    let sup_block = a
        .iter()
        .map(|(p, ra)| sup_log_ratio(ra, &b[p]))
        .fold(0.0, f64::max);
    let (k, h) = (target.alphabet(), target.horizon());
    let sup_resp = sup_log_ratio(&compose_rows(&a, k, h)?, &compose_rows(&b, k, h)?);
    Ok(MisspecReport {
        epsilon,
        sup_block_log_ratio: sup_block,
        block_bound: 2.0 * beta * epsilon,
        sup_response_log_ratio: sup_resp,
        response_bound: 2.0 * beta * h as f64 * epsilon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalGlobalReport {
    /// Largest per-prefix `chi^2(policy || pi*)`.
    pub eps_max: f64,
    pub global_chi2: f64,
    /// `(1 + eps_max)^H - 1`.
    pub bound: f64,
}

impl LocalGlobalReport {
    pub fn holds(&self) -> bool {
        self.global_chi2 <= self.bound * (1.0 + 1e-12) + 1e-12
    }
}

pub fn local_to_global_check(
    policy: &TabularPolicy,
    target: &TabularPolicy,
    reward: &ResponseReward,
    beta: f64,
) -> Result<LocalGlobalReport, OracleError> {
    let star = tilted_policy(target, reward, beta)?;
    let mut eps_max: f64 = 0.0;
    for (p, row) in policy.rows() {
        let star_row = star
            .rows
            .get(p)
            .ok_or_else(|| ModelError::InvalidPrefix(p.clone()))?;
        eps_max = eps_max.max(divergences(row, star_row)?.chi2);
    }
    let global_chi2 = divergences(&policy.response_distribution()?, &star.probs)?.chi2;
    Ok(LocalGlobalReport {
        eps_max,
        global_chi2,
        bound: (1.0 + eps_max).powi(policy.horizon() as i32) - 1.0,
    })
}
