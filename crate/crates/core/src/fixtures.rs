//! Bundled toy instances.
//!
//! * `T1`: one block over `{y0, y1}`; target `(0.8, 0.2)`, draft `(0.6, 0.4)`,
//!   reward `(0, ln 4)`, `beta = 1`. Its tilted optimum is uniform.
//! * `T2`: two blocks over a binary alphabet with the idealized PRM.
//! * `LB(theta)`: the two-response instance on which soft selection cannot
//!   beat an `O(theta / n)` bias; target `(theta, 1) / (1 + theta)`, reward
//!   `(0, R)` with `theta = exp(beta R)`.

use std::collections::BTreeMap;

use rand::Rng;

use crate::instance::{InstanceFile, PrmKind, PrmSpec, ToyInstance};
use crate::instance::format_key;
use crate::policy::{enumerate_prefixes, enumerate_responses};
use crate::rng::{substream, Lane};

fn rows(entries: &[(&str, &[f64])]) -> BTreeMap<String, Vec<f64>> {
    entries
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_vec()))
        .collect()
}

fn build(file: InstanceFile) -> ToyInstance {
    file.build().expect("bundled fixture is valid")
}

pub fn t1() -> ToyInstance {
    build(t1_file())
}

pub fn t1_file() -> InstanceFile {
    InstanceFile {
        name: "T1".into(),
        alphabet: 2,
        horizon: 1,
        beta: 1.0,
        target: rows(&[("", &[0.8, 0.2])]),
        draft: Some(rows(&[("", &[0.6, 0.4])])),
        reward: BTreeMap::from([("0".into(), 0.0), ("1".into(), 4f64.ln())]),
        prm: Some(PrmSpec::Named(PrmKind::Outcome)),
        prm_range: None,
        correct: None,
    }
}

pub fn t2() -> ToyInstance {
    build(t2_file())
}

pub fn t2_file() -> InstanceFile {
    InstanceFile {
        name: "T2".into(),
        alphabet: 2,
        horizon: 2,
        beta: 1.0,
        target: rows(&[("", &[0.6, 0.4]), ("0", &[0.7, 0.3]), ("1", &[0.2, 0.8])]),
        draft: Some(rows(&[("", &[0.5, 0.5]), ("0", &[0.5, 0.5]), ("1", &[0.4, 0.6])])),
        reward: BTreeMap::from([
            ("0,0".into(), 0.1),
            ("0,1".into(), 0.9),
            ("1,0".into(), 0.3),
            ("1,1".into(), 1.0),
        ]),
        prm: Some(PrmSpec::Named(PrmKind::Idealized)),
        prm_range: None,
        correct: None,
    }
}

/// `LB(theta)` with `beta = 1`, so `R = ln theta`.
pub fn lower_bound(theta: f64) -> ToyInstance {
    build(lower_bound_file(theta))
}

pub fn lower_bound_file(theta: f64) -> InstanceFile {
    let p1 = 1.0 / (1.0 + theta);
    let target = rows(&[("", &[1.0 - p1, p1])]);
    InstanceFile {
        name: format!("LB({theta})"),
        alphabet: 2,
        horizon: 1,
        beta: 1.0,
        target: target.clone(),
        draft: Some(target),
        reward: BTreeMap::from([("0".into(), 0.0), ("1".into(), theta.ln())]),
        prm: Some(PrmSpec::Named(PrmKind::Outcome)),
        prm_range: None,
        correct: None,
    }
}

fn random_row(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    // Bounded away from zero so the draft covers the target.
    let raw: Vec<f64> = (0..k).map(|_| 0.1 + rng.random::<f64>()).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

/// A random full-support instance with the idealized PRM and `beta = 1.5`.
pub fn random_instance(seed: u64, alphabet: usize, horizon: usize) -> ToyInstance {
    let mut rng = substream(seed, 0, Lane::Candidate, 0);
    let prefixes = enumerate_prefixes(alphabet, horizon);
    let target: BTreeMap<String, Vec<f64>> = prefixes
        .iter()
        .map(|p| (format_key(p), random_row(&mut rng, alphabet)))
        .collect();
    let draft: BTreeMap<String, Vec<f64>> = prefixes
        .iter()
        .map(|p| (format_key(p), random_row(&mut rng, alphabet)))
        .collect();
    let reward = enumerate_responses(alphabet, horizon)
        .iter()
        .map(|r| (format_key(r), rng.random::<f64>()))
        .collect();
    build(InstanceFile {
        name: format!("random-{seed}-{alphabet}x{horizon}"),
        alphabet,
        horizon,
        beta: 1.5,
        target,
        draft: Some(draft),
        reward,
        prm: Some(PrmSpec::Named(PrmKind::Idealized)),
        prm_range: None,
        correct: None,
    })
}

/// Looks up a bundled fixture by name: `T1`, `T2`, `LB(<theta>)`.
pub fn by_name(name: &str) -> Option<ToyInstance> {
    let upper = name.trim().to_ascii_uppercase();
    match upper.as_str() {
        "T1" => Some(t1()),
        "T2" => Some(t2()),
        _ => {
            let theta = upper.strip_prefix("LB(")?.strip_suffix(')')?;
            theta.parse::<f64>().ok().filter(|t| *t > 0.0).map(lower_bound)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_parse() {
        assert_eq!(t1().horizon(), 1);
        assert_eq!(t2().horizon(), 2);
        assert_eq!(lower_bound(4.0).target.row(&[]).unwrap(), &[0.8, 0.2]);
        assert_eq!(by_name("lb(2)").unwrap().name, "LB(2)");
        assert!(by_name("T9").is_none());
        let r = random_instance(1, 3, 3);
        assert!(r.target.is_total() && r.draft.is_total());
    }

    #[test]
    fn t1_correct_is_reward_maximiser() {
        assert_eq!(t1().correct, vec![vec![1]]);
        assert_eq!(t2().correct, vec![vec![1, 1]]);
    }
}
