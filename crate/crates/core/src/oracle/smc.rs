//! Exact output distribution of one SMC selection step.
//!
//! With `N` candidates drawn i.i.d. from `gen` and one kept with probability
//! proportional to `phi(y) = (pi_target / pi_gen)(y) exp(beta r(y))`, the law
//! of the kept response is `pi_hat_N`. For fixed `N` it is enumerated over
//! multisets; for `N ~ Poisson(n) | N > 0` it is written through the Laplace
//! transform `Phi(s) = E_gen[exp(-s phi)]`:
//!
//! ```text
//! pi_bar(y)   = n g_y phi_y / (1 - e^-n) * Int_0^inf exp(n (Phi(s) - 1)) exp(-s phi_y) ds
//! E[pi_N(y)^2] = g_y^2 phi_y^2 / (1 - e^-n)
//!              * Int Int (n + n^2 Phi1 Phi2) exp(n (Phi1 Phi2 - 1)) exp(-(s1 + s2) phi_y) ds1 ds2
//! ```
//!
//! `phi` is rescaled so that `E_gen[phi] = 1`; every output is invariant to
//! that scale.

use serde::{Deserialize, Serialize};

use super::quadrature::{geometric_breakpoints, integrate, integrate_panels, QuadConfig};
use super::{divergences, logsumexp, OracleError};

/// Largest multiset count [`exact_smc_fixed_n`] will enumerate.
pub const MULTISET_LIMIT: f64 = 1e6;

/// Quadrature results must sum to one within this.
pub const QUADRATURE_SUM_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct TiltFunction {
    gen: Vec<f64>,
    phi: Vec<f64>,
}

impl TiltFunction {
    /// From a generator distribution and `ln phi` per response (any scale).
    pub fn new(gen: Vec<f64>, log_phi: Vec<f64>) -> Result<Self, OracleError> {
        if gen.len() != log_phi.len() {
            return Err(OracleError::LengthMismatch(gen.len(), log_phi.len()));
        }
        if gen.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(OracleError::BadInput("generator has a negative or non-finite entry".into()));
        }
        let total: f64 = gen.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(OracleError::BadInput(format!("generator sums to {total}")));
        }
        let weighted: Vec<f64> = gen
            .iter()
            .zip(&log_phi)
            .map(|(g, l)| if *g > 0.0 { g.ln() + l } else { f64::NEG_INFINITY })
            .collect();
        let c = logsumexp(&weighted);
        if !c.is_finite() {
            return Err(OracleError::DegenerateSupport);
        }
        let phi = gen
            .iter()
            .zip(&log_phi)
            .map(|(g, l)| if *g > 0.0 { (l - c).exp() } else { 0.0 })
            .collect();
        Ok(Self { gen, phi })
    }

    /// `phi = (target / gen) exp(beta r)`; the generator must cover the target.
    pub fn from_models(
        gen: &[f64],
        target: &[f64],
        reward: &[f64],
        beta: f64,
    ) -> Result<Self, OracleError> {
        if gen.len() != target.len() || gen.len() != reward.len() {
            return Err(OracleError::LengthMismatch(gen.len(), target.len()));
        }
        let mut log_phi = Vec::with_capacity(gen.len());
        for (i, ((g, t), r)) in gen.iter().zip(target).zip(reward).enumerate() {
            if *t > 0.0 && *g <= 0.0 {
                return Err(OracleError::SupportViolation { index: i });
            }
            log_phi.push(if *g > 0.0 && *t > 0.0 {
                t.ln() - g.ln() + beta * r
            } else {
                f64::NEG_INFINITY
            });
        }
        Self::new(gen.to_vec(), log_phi)
    }

    pub fn gen(&self) -> &[f64] {
        &self.gen
    }

    /// Normalised so that `sum gen * phi = 1`.
    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// `pi*(y) = gen(y) phi(y)`.
    pub fn target_distribution(&self) -> Vec<f64> {
        self.gen.iter().zip(&self.phi).map(|(g, p)| g * p).collect()
    }

    pub fn laplace(&self, s: f64) -> f64 {
        self.gen
            .iter()
            .zip(&self.phi)
            .filter(|(g, _)| **g > 0.0)
            .map(|(g, p)| g * (-s * p).exp())
            .sum()
    }

    pub fn laplace_derivative(&self, s: f64) -> f64 {
        -self
            .gen
            .iter()
            .zip(&self.phi)
            .map(|(g, p)| g * p * (-s * p).exp())
            .sum::<f64>()
    }

    fn support_phi(&self) -> impl Iterator<Item = f64> + '_ {
        self.gen.iter().zip(&self.phi).filter(|(g, _)| **g > 0.0).map(|(_, p)| *p)
    }

    /// Smallest `phi` on the generator support.
    pub fn phi_min(&self) -> f64 {
        self.support_phi().fold(f64::INFINITY, f64::min)
    }

    pub fn phi_max(&self) -> f64 {
        self.support_phi().fold(0.0, f64::max)
    }
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for k in 1..=n {
        out[k] = out[k - 1] + (k as f64).ln();
    }
    out
}

fn multiset_count(n: usize, k: usize) -> f64 {
    // C(n + k - 1, k - 1)
    let lf = ln_factorials(n + k);
    (lf[n + k - 1] - lf[n] - lf[k - 1]).exp()
}

/// `pi_hat_n` by enumerating every multiset of `n` draws from the generator
/// support. A multiset whose weights are all zero selects uniformly.
pub fn exact_smc_fixed_n(tilt: &TiltFunction, n: usize) -> Result<Vec<f64>, OracleError> {
    if n == 0 {
        return Err(OracleError::BadInput("n must be at least 1".into()));
    }
    let support: Vec<usize> = (0..tilt.gen.len()).filter(|&i| tilt.gen[i] > 0.0).collect();
    let k = support.len();
    let count = multiset_count(n, k);
    if count > MULTISET_LIMIT {
        return Err(OracleError::EnumerationTooLarge { count, limit: MULTISET_LIMIT });
    }
    let lf = ln_factorials(n);
    let lg: Vec<f64> = support.iter().map(|&i| tilt.gen[i].ln()).collect();
    let phi: Vec<f64> = support.iter().map(|&i| tilt.phi[i]).collect();
    let mut out = vec![0.0; tilt.gen.len()];
    let mut counts = vec![0usize; k];
    counts[k - 1] = n;
    loop {
        let logp = lf[n]
            + counts
                .iter()
                .zip(&lg)
                .map(|(&c, l)| c as f64 * l - lf[c])
                .sum::<f64>();
        let p = logp.exp();
        let denom: f64 = counts.iter().zip(&phi).map(|(&c, f)| c as f64 * f).sum();
        for j in 0..k {
            if counts[j] > 0 {
                let share = if denom > 0.0 {
                    counts[j] as f64 * phi[j] / denom
                } else {
                    counts[j] as f64 / n as f64
                };
                out[support[j]] += p * share;
            }
        }
        if !advance(&mut counts) {
            break;
        }
    }
    Ok(out)
}

/// Steps through compositions of a fixed total. Returns false when done.
fn advance(counts: &mut [usize]) -> bool {
    let k = counts.len();
    if k < 2 {
        return false;
    }
    let tail = counts[k - 1];
    if tail > 0 {
        counts[k - 2] += 1;
        counts[k - 1] = tail - 1;
        return true;
    }
    // counts[k-1] == 0: carry leftwards.
    let mut j = k - 2;
    loop {
        if counts[j] > 0 && j > 0 {
            let moved = counts[j];
            counts[j] = 0;
            counts[j - 1] += 1;
            counts[k - 1] = moved - 1;
            return true;
        }
        if j == 0 {
            return false;
        }
        j -= 1;
    }
}

/// `P(N = m | N > 0)` for `N ~ Poisson(n)`, `m = 1..=max_n`, renormalised
/// over the truncated range.
pub fn truncated_poisson_weights(n: f64, max_n: usize) -> Vec<(usize, f64)> {
    let ln_n = n.ln();
    let mut lf = 0.0;
    let logw: Vec<f64> = (1..=max_n)
        .map(|m| {
            lf += (m as f64).ln();
            m as f64 * ln_n - n - lf
        })
        .collect();
    let z = logsumexp(&logw);
    (1..=max_n).zip(logw).map(|(m, w)| (m, (w - z).exp())).collect()
}

/// Default truncation `n + 10 sqrt(n)` for Poisson mixtures.
pub fn default_truncation(n: f64) -> usize {
    (n + 10.0 * n.sqrt()).ceil().max(1.0) as usize
}

/// Poisson-mixed fixed-`N` oracle quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureStats {
    pub n: f64,
    pub max_n: usize,
    /// `sum_N w_N pi_hat_N`.
    pub distribution: Vec<f64>,
    /// `sum_N w_N KL(pi_hat_N || pi*)`.
    pub expected_kl: f64,
    /// `sum_N w_N chi2(pi_hat_N || pi*)`.
    pub expected_chi2: f64,
    /// `sum_N w_N ln(1 + chi2(pi_hat_N || pi*))`.
    pub expected_log1p_chi2: f64,
}

pub fn poisson_mixture(tilt: &TiltFunction, n: f64, max_n: usize) -> Result<MixtureStats, OracleError> {
    if !(n > 0.0 && n.is_finite()) {
        return Err(OracleError::BadInput(format!("Poisson mean must be positive, got {n}")));
    }
    let star = tilt.target_distribution();
    let mut stats = MixtureStats {
        n,
        max_n,
        distribution: vec![0.0; star.len()],
        expected_kl: 0.0,
        expected_chi2: 0.0,
        expected_log1p_chi2: 0.0,
    };
    for (m, w) in truncated_poisson_weights(n, max_n) {
        let p = exact_smc_fixed_n(tilt, m)?;
        let d = divergences(&p, &star)?;
        for (acc, v) in stats.distribution.iter_mut().zip(&p) {
            *acc += w * v;
        }
        stats.expected_kl += w * d.kl;
        stats.expected_chi2 += w * d.chi2;
        stats.expected_log1p_chi2 += w * d.chi2.ln_1p();
    }
    Ok(stats)
}

fn quad_config() -> QuadConfig {
    QuadConfig {
        abs_tol: 1e-12,
        rel_tol: 1e-11,
        max_subdivisions: 4000,
    }
}

/// Upper limit beyond which `exp(-s phi_y)` times `scale` is below `1e-14`.
fn tail_cutoff(phi_y: f64, scale: f64) -> f64 {
    ((scale.max(1.0)).ln() + 14.0 * std::f64::consts::LN_10) / phi_y
}

fn breakpoints(tilt: &TiltFunction, n: f64, end: f64) -> Vec<f64> {
    let first = 0.1 / (n * tilt.phi_max()).max(1.0);
    geometric_breakpoints(first, end)
}

fn check_sum(dist: &[f64]) -> Result<(), OracleError> {
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > QUADRATURE_SUM_TOL {
        return Err(OracleError::Normalisation(total));
    }
    Ok(())
}

/// `pi_bar_n` for `N ~ Poisson(n) | N > 0`, by adaptive quadrature.
pub fn exact_smc_poisson(tilt: &TiltFunction, n: f64) -> Result<Vec<f64>, OracleError> {
    if !(n > 0.0 && n.is_finite()) {
        return Err(OracleError::BadInput(format!("Poisson mean must be positive, got {n}")));
    }
    let norm = -(-n).exp_m1();
    let cfg = quad_config();
    let mut out = vec![0.0; tilt.gen.len()];
    for (y, slot) in out.iter_mut().enumerate() {
        let (g, phi) = (tilt.gen[y], tilt.phi[y]);
        if g <= 0.0 {
            continue;
        }
        if phi <= 0.0 {
            // Only reachable when every weight is zero; then selection is uniform
            // over candidates and the law is the generator itself.
            *slot = g * (-n * tilt.laplace(0.0)).exp() / norm;
            continue;
        }
        let scale = n * g * phi / norm;
        let end = tail_cutoff(phi, scale / phi);
        let pts = breakpoints(tilt, n, end);
        let f = |s: f64| (n * (tilt.laplace(s) - 1.0) - s * phi).exp();
        let est = integrate_panels(f, &pts, &cfg)?;
        *slot = scale * est.value;
    }
    check_sum(&out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondMoment {
    pub n: f64,
    /// `E_N[pi_hat_N(y)^2]` per response.
    pub second_moments: Vec<f64>,
    /// `sum_y E_N[pi_hat_N(y)^2] / pi*(y) = 1 + E_N[chi2(pi_hat_N || pi*)]`.
    pub one_plus_chi2: f64,
}

impl SecondMoment {
    pub fn expected_chi2(&self) -> f64 {
        self.one_plus_chi2 - 1.0
    }
}

/// `E_N[pi_hat_N(y)^2]` by nested 2-D quadrature.
pub fn exact_smc_second_moment(tilt: &TiltFunction, n: f64) -> Result<SecondMoment, OracleError> {
    if !(n > 0.0 && n.is_finite()) {
        return Err(OracleError::BadInput(format!("Poisson mean must be positive, got {n}")));
    }
    let norm = -(-n).exp_m1();
    let star = tilt.target_distribution();
    let outer_cfg = quad_config();
    let inner_cfg = QuadConfig {
        abs_tol: 1e-14,
        rel_tol: 1e-12,
        ..quad_config()
    };
    let mut second = vec![0.0; star.len()];
    let mut total = 0.0;
    for y in 0..star.len() {
        let (g, phi) = (tilt.gen[y], tilt.phi[y]);
        if g <= 0.0 || phi <= 0.0 {
            continue;
        }
        let scale = g * g * phi * phi / norm;
        let end = tail_cutoff(phi, (n + n * n) * scale / (phi * phi));
        let pts = breakpoints(tilt, n, end);
        let mut inner_err = None;
        let outer = |s1: f64| {
            let p1 = tilt.laplace(s1);
            let inner = |s2: f64| {
                let x = p1 * tilt.laplace(s2);
                (n + n * n * x) * (n * (x - 1.0) - (s1 + s2) * phi).exp()
            };
            match integrate(inner, 0.0, end, &inner_cfg)
                .or_else(|_| integrate_panels(inner, &pts, &inner_cfg))
            {
                Ok(e) => e.value,
                Err(e) => {
                    inner_err.get_or_insert(e);
                    0.0
                }
            }
        };
        let est = integrate_panels(outer, &pts, &outer_cfg)?;
        if let Some(e) = inner_err {
            return Err(e.into());
        }
        second[y] = scale * est.value;
        total += second[y] / star[y];
    }
    Ok(SecondMoment {
        n,
        second_moments: second,
        one_plus_chi2: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::total_variation;

    fn t1_tilt() -> TiltFunction {
        TiltFunction::from_models(&[0.8, 0.2], &[0.8, 0.2], &[0.0, 4f64.ln()], 1.0).unwrap()
    }

    #[test]
    fn tilt_normalisation_and_laplace() {
        let t = t1_tilt();
        assert!((t.phi()[0] - 1.0 / 1.6).abs() < 1e-15);
        assert!((t.laplace(0.0) - 1.0).abs() < 1e-15);
        assert!(t.laplace(1.0) < t.laplace(0.5));
        assert!((t.laplace_derivative(0.0) + 1.0).abs() < 1e-15);
        assert_eq!(t.target_distribution(), vec![0.5, 0.5]);
        assert!(TiltFunction::from_models(&[1.0, 0.0], &[0.5, 0.5], &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn compositions_enumerate_every_multiset() {
        let mut c = vec![0, 0, 3];
        let mut seen = vec![c.clone()];
        while advance(&mut c) {
            assert_eq!(c.iter().sum::<usize>(), 3);
            seen.push(c.clone());
        }
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn fixed_n_small_cases() {
        let t = t1_tilt();
        assert_eq!(exact_smc_fixed_n(&t, 1).unwrap(), vec![0.8, 0.2]);
        let p2 = exact_smc_fixed_n(&t, 2).unwrap();
        assert!((p2[0] - 0.704).abs() < 1e-14 && (p2[1] - 0.296).abs() < 1e-14);
        let star = t.target_distribution();
        let p64 = exact_smc_fixed_n(&t, 64).unwrap();
        assert!(total_variation(&p64, &star) <= total_variation(&p2, &star));
        assert!((p64.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_n_three_symbols_sums_to_one() {
        let t = TiltFunction::new(vec![0.5, 0.3, 0.2], vec![0.0, 1.0, -0.5]).unwrap();
        for n in [1, 2, 5, 17] {
            let p = exact_smc_fixed_n(&t, n).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_guard() {
        let t = TiltFunction::new(vec![0.1; 10], vec![0.0; 10]).unwrap();
        assert!(matches!(
            exact_smc_fixed_n(&t, 40),
            Err(OracleError::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn zero_weights_select_uniformly() {
        let t = TiltFunction::new(vec![0.5, 0.5], vec![0.0, f64::NEG_INFINITY]).unwrap();
        // Only the all-y1 multiset has zero total weight.
        let p = exact_smc_fixed_n(&t, 2).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn poisson_weights() {
        let w = truncated_poisson_weights(4.0, default_truncation(4.0));
        assert!((w.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-14);
        assert_eq!(w[0].0, 1);
        let mean: f64 = w.iter().map(|(m, p)| *m as f64 * p).sum();
        assert!((mean - 4.0 / (1.0 - (-4f64).exp())).abs() < 1e-6);
    }

    #[test]
    fn point_mass_generator() {
        let t = TiltFunction::new(vec![1.0], vec![2.0]).unwrap();
        let p = exact_smc_poisson(&t, 5.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-9);
        let m = exact_smc_second_moment(&t, 5.0).unwrap();
        assert!(m.expected_chi2().abs() < 1e-8);
    }

    #[test]
    fn quadrature_matches_mixture() {
        let t = t1_tilt();
        for n in [4.0, 8.0, 16.0] {
            let q = exact_smc_poisson(&t, n).unwrap();
            let m = poisson_mixture(&t, n, default_truncation(n)).unwrap();
            assert!(total_variation(&q, &m.distribution) < 1e-6, "n={n}");
        }
    }

    #[test]
    fn second_moment_matches_mixture() {
        let t = t1_tilt();
        for n in [4.0, 8.0] {
            let sm = exact_smc_second_moment(&t, n).unwrap();
            let m = poisson_mixture(&t, n, default_truncation(n)).unwrap();
            assert!((sm.expected_chi2() - m.expected_chi2).abs() < 1e-7, "n={n}");
            assert!(sm.one_plus_chi2.ln() >= m.expected_kl);
        }
    }

    #[test]
    fn lower_bound_margin() {
        let theta: f64 = 4.0;
        let gen = [theta / (1.0 + theta), 1.0 / (1.0 + theta)];
        let t = TiltFunction::from_models(&gen, &gen, &[0.0, theta.ln()], 1.0).unwrap();
        let p = exact_smc_poisson(&t, 16.0).unwrap();
        assert!(p[0] - 0.5 >= theta / (50.0 * 16.0));
    }
}
