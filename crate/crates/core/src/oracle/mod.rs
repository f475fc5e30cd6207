//! Exact reference computations on finite instances.
//!
//! Everything here is computed by enumeration or deterministic quadrature, so
//! it can serve as ground truth for the engine's Monte Carlo behaviour:
//!
//! * [`tilt`]: the tilted optimum `pi* ~ pi_target * exp(beta r)`, the
//!   KL-regularised value function and the advantage PRM derived from it, the
//!   per-block factorisation, the regularised objective, and PRM
//!   misspecification bounds.
//! * [`smc`]: the exact output distribution of "draw `N` candidates, pick one
//!   with probability proportional to `exp(S)`", for fixed `N` (multiset
//!   enumeration) and for `N ~ Poisson(n)` conditioned on `N > 0` (Laplace
//!   transform integrals), plus its chi-squared second moment.
//! * [`divergences`] and [`coverage_coefficients`].

pub mod quadrature;
pub mod smc;
pub mod tilt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{enumerate_prefixes, enumerate_responses, ModelError, TabularPolicy};

pub use quadrature::QuadError;
pub use smc::{
    exact_smc_fixed_n, exact_smc_poisson, exact_smc_second_moment, poisson_mixture,
    truncated_poisson_weights, default_truncation, MixtureStats, SecondMoment, TiltFunction,
};
pub use tilt::{
    block_tilted_rows, idealized_prm, kl_objective, kl_value_function,
    local_to_global_check, misspecification_bound_check, objective_gap,
    product_decomposition_check, tilted_policy, AdvantageTable, LocalGlobalReport, MisspecReport,
    ObjectiveGap, TiltedPolicy, ValueTable,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("target assigns zero mass to every response")]
    DegenerateSupport,
    #[error("multiset enumeration needs {count:.3e} terms (limit {limit:.0e})")]
    EnumerationTooLarge { count: f64, limit: f64 },
    #[error(transparent)]
    QuadratureNonConvergence(#[from] QuadError),
    #[error("support violation: q(y) = 0 where p(y) > 0 at index {index}")]
    SupportViolation { index: usize },
    #[error("distribution lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("quadrature result sums to {0}, not 1")]
    Normalisation(f64),
    #[error("{0}")]
    BadInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `ln(sum(exp(xs)))`, `-inf` for an empty or all `-inf` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Plug-in divergences between two finite distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// `KL(p || q)` in nats.
    pub kl: f64,
    /// `chi^2(p || q) = sum p^2 / q - 1`.
    pub chi2: f64,
    /// Total variation, `0.5 * sum |p - q|`.
    pub tv: f64,
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn divergences(p: &[f64], q: &[f64]) -> Result<DivergenceReport, OracleError> {
    if p.len() != q.len() {
        return Err(OracleError::LengthMismatch(p.len(), q.len()));
    }
    let mut kl = 0.0;
    let mut second = 0.0;
    for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(OracleError::SupportViolation { index: i });
            }
            kl += a * (a / b).ln();
            second += a * a / b;
        }
    }
    Ok(DivergenceReport {
        kl: kl.max(0.0),
        chi2: (second - 1.0).max(0.0),
        tv: total_variation(p, q),
    })
}

/// Worst-case density-ratio products between a draft and a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Over full responses.
    pub c_seq: f64,
    /// Supremum over prefixes of the per-block product.
    pub c_block: f64,
}

fn ratio_product(draft: &[f64], target: &[f64]) -> f64 {
    let mut up: f64 = 0.0;
    let mut down: f64 = 0.0;
    for (&d, &t) in draft.iter().zip(target) {
        match (d > 0.0, t > 0.0) {
            (true, true) => {
                up = up.max(t / d);
                down = down.max(d / t);
            }
            (false, false) => {}
            _ => return f64::INFINITY,
        }
    }
    up * down
}

/// `C_seq` and `C_block`; a support mismatch is reported as `+inf`.
pub fn coverage_coefficients(
    draft: &TabularPolicy,
    target: &TabularPolicy,
) -> Result<CoverageReport, OracleError> {
    if draft.alphabet() != target.alphabet() || draft.horizon() != target.horizon() {
        return Err(OracleError::BadInput("draft and target shapes differ".into()));
    }
    let c_seq = ratio_product(&draft.response_distribution()?, &target.response_distribution()?);
    let mut c_block: f64 = 1.0;
    for prefix in enumerate_prefixes(target.alphabet(), target.horizon()) {
        match (draft.row(&prefix), target.row(&prefix)) {
            (Ok(d), Ok(t)) => c_block = c_block.max(ratio_product(d, t)),
            (Err(_), Err(_)) => {}
            _ => return Ok(CoverageReport { c_seq, c_block: f64::INFINITY }),
        }
    }
    Ok(CoverageReport { c_seq, c_block })
}

/// Distribution over full responses induced by per-prefix next-symbol rows.
pub fn compose_rows(
    rows: &std::collections::BTreeMap<Vec<u32>, Vec<f64>>,
    alphabet: usize,
    horizon: usize,
) -> Result<Vec<f64>, OracleError> {
    enumerate_responses(alphabet, horizon)
        .iter()
        .map(|r| {
            let mut p = 1.0;
            for t in 0..r.len() {
                let row = rows
                    .get(&r[..t])
                    .ok_or_else(|| ModelError::InvalidPrefix(r[..t].to_vec()))?;
                p *= row[r[t] as usize];
            }
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    #[test]
    fn identical_distributions_have_zero_divergence() {
        let p = [0.2, 0.3, 0.5];
        let d = divergences(&p, &p).unwrap();
        assert!(d.kl.abs() < 1e-15 && d.chi2.abs() < 1e-15 && d.tv == 0.0);
    }

    #[test]
    fn smc_two_candidate_kl_value() {
        // pi_hat_2 on T1 against the uniform optimum.
        let d = divergences(&[0.704, 0.296], &[0.5, 0.5]).unwrap();
        let expected = 0.704 * 1.408f64.ln() + 0.296 * 0.592f64.ln();
        assert!((d.kl - expected).abs() < 1e-15);
        assert!((d.kl - 0.085_710_2).abs() < 1e-7);
    }

    #[test]
    fn support_violation() {
        assert!(matches!(
            divergences(&[0.5, 0.5], &[1.0, 0.0]),
            Err(OracleError::SupportViolation { index: 1 })
        ));
    }

    #[test]
    fn coverage_of_fixtures() {
        let t1 = fixtures::t1();
        let c = coverage_coefficients(&t1.draft, &t1.target).unwrap();
        assert!((c.c_seq - 8.0 / 3.0).abs() < 1e-12);
        assert!((c.c_block - 8.0 / 3.0).abs() < 1e-12);
        let same = coverage_coefficients(&t1.target, &t1.target).unwrap();
        assert_eq!((same.c_seq, same.c_block), (1.0, 1.0));
        let lb = fixtures::lower_bound(4.0);
        let point = TabularPolicy::new(
            "point",
            2,
            1,
            std::collections::BTreeMap::from([(vec![], vec![1.0, 0.0])]),
        )
        .unwrap();
        let c = coverage_coefficients(&point, &lb.target).unwrap();
        assert!(c.c_seq.is_infinite() && c.c_block.is_infinite());
    }

    #[test]
    fn coverage_at_least_one() {
        for seed in 0..5 {
            let inst = fixtures::random_instance(seed, 3, 2);
            let c = coverage_coefficients(&inst.draft, &inst.target).unwrap();
            assert!(c.c_seq >= 1.0 && c.c_block >= 1.0);
        }
    }

    fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
            let z: f64 = v.iter().sum();
            v.into_iter().map(|x| x / z).collect()
        })
    }

    proptest! {
        #[test]
        fn pinsker_and_chi2_bounds(p in simplex(5), q in simplex(5)) {
            let d = divergences(&p, &q).unwrap();
            prop_assert!(d.tv * d.tv <= d.kl / 2.0 + 1e-12);
            prop_assert!(d.kl <= (1.0 + d.chi2).ln() + 1e-12);
            prop_assert!((0.0..=1.0).contains(&d.tv));
        }
    }
}
