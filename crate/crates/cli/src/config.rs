//! Experiment configuration files (TOML).
//!
//! ```toml
//! name = "t2-smoke"
//! output_dir = "out/t2-smoke"
//! workers = 4
//! execution = "concurrent"
//! seeds = [0, 1, 2]
//! methods = ["specs", "beam_search(target)", "rsd++", "random_switch"]
//!
//! [toy]
//! instance = "T2"          # bundled fixture name or path to an instance file
//! episodes = 200           # per seed
//!
//! [grid]
//! n = [4]
//! tau = [0.7, 0.8, 0.9]
//! gamma = [1]
//! beta = [1.0]             # omitted: beta = 2 * token_budget
//! horizon = 2
//! token_budget = 2
//! ```
//!
//! Remote runs replace `[toy]` with a dataset and three endpoints:
//!
//! ```toml
//! [dataset]
//! path = "data/mini_math.jsonl"
//!
//! [endpoints.draft]
//! base_url = "http://127.0.0.1:8000"
//! model = "draft"
//!
//! [endpoints.target]
//! base_url = "http://127.0.0.1:8000"
//! model = "target"
//!
//! [endpoints.prm]
//! base_url = "http://127.0.0.1:8000"
//! model = "prm"
//! ```
//!
//! A bare `random_switch` method takes its target probability from the
//! matching `specs` row (same grid point). Relative paths resolve against
//! the config file's directory.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use specs_client::EndpointConfig;
use specs_core::policy::LatencyProfile;
use specs_core::{BeamMode, Execution, MethodSpec, RunConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub methods: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToySource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoints: Option<Endpoints>,
    #[serde(default)]
    pub grid: Grid,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_workers() -> usize {
    1
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySource {
    pub instance: String,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub latency: ToyLatency,
}

fn default_episodes() -> usize {
    100
}

/// Simulated per-call delays for toy models.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyLatency {
    #[serde(default)]
    pub draft: LatencyProfile,
    #[serde(default)]
    pub target: LatencyProfile,
    #[serde(default)]
    pub prm: LatencyProfile,
}

impl ToyLatency {
    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    pub draft: EndpointConfig,
    pub target: EndpointConfig,
    pub prm: EndpointConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default = "default_n")]
    pub n: Vec<usize>,
    #[serde(default = "default_tau")]
    pub tau: Vec<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_budget")]
    pub token_budget: usize,
    #[serde(default)]
    pub beam_mode: BeamMode,
    #[serde(default = "default_rsd")]
    pub rsd_threshold: f64,
}

fn default_n() -> Vec<usize> {
    vec![4]
}
fn default_tau() -> Vec<f64> {
    vec![0.8]
}
fn default_gamma() -> Vec<usize> {
    vec![256]
}
fn default_horizon() -> usize {
    20
}
fn default_budget() -> usize {
    2048
}
fn default_rsd() -> f64 {
    0.7
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            n: default_n(),
            tau: default_tau(),
            gamma: default_gamma(),
            beta: None,
            horizon: default_horizon(),
            token_budget: default_budget(),
            beam_mode: BeamMode::default(),
            rsd_threshold: default_rsd(),
        }
    }
}

/// One point of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub n: usize,
    pub tau: f64,
    pub gamma: usize,
    pub beta: f64,
}

impl Grid {
    /// `2L` for token budget `L`.
    pub fn default_beta(&self) -> f64 {
        2.0 * self.token_budget as f64
    }

    pub fn betas(&self) -> Vec<f64> {
        self.beta.clone().unwrap_or_else(|| vec![self.default_beta()])
    }

    /// Cartesian product in `n`, `gamma`, `beta`, `tau` order (`tau` fastest).
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &gamma in &self.gamma {
                for beta in self.betas() {
                    for &tau in &self.tau {
                        out.push(GridPoint { n, tau, gamma, beta });
                    }
                }
            }
        }
        out
    }

    pub fn run_config(&self, p: GridPoint, seed: u64) -> RunConfig {
        RunConfig {
            n: p.n,
            gamma: p.gamma,
            tau: p.tau,
            beta: p.beta,
            horizon: self.horizon,
            token_budget: self.token_budget,
            beam_mode: self.beam_mode,
            seed,
            rsd_threshold: self.rsd_threshold,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config and resolves its relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        if let Some(d) = &mut self.dataset {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
        }
        if let Some(t) = &mut self.toy {
            if specs_core::fixtures::by_name(&t.instance).is_none() && Path::new(&t.instance).is_relative() {
                t.instance = base.join(&t.instance).to_string_lossy().into_owned();
            }
        }
    }

    pub fn parsed_methods(&self) -> Result<Vec<MethodSpec>, ConfigError> {
        self.methods
            .iter()
            .map(|m| MethodSpec::from_str(m).map_err(|e| ConfigError::Invalid(e.to_string())))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        match (&self.toy, &self.dataset) {
            (Some(_), Some(_)) => return invalid("give either [toy] or [dataset], not both"),
            (None, None) => return invalid("one of [toy] or [dataset] is required"),
            (None, Some(_)) if self.endpoints.is_none() => {
                return invalid("[dataset] runs need [endpoints.draft/target/prm]")
            }
            _ => {}
        }
        if self.workers == 0 {
            return invalid("workers must be at least 1");
        }
        if self.seeds.is_empty() {
            return invalid("seeds must not be empty");
        }
        if self.methods.is_empty() {
            return invalid("methods must not be empty");
        }
        let g = &self.grid;
        if g.n.is_empty() || g.tau.is_empty() || g.gamma.is_empty() || g.beta.as_ref().is_some_and(Vec::is_empty) {
            return invalid("grid lists must not be empty");
        }
        let methods = self.parsed_methods()?;
        for m in &methods {
            if let MethodSpec::RandomSwitch { p_big } = m {
                if p_big.is_nan() && !methods.contains(&MethodSpec::Specs) {
                    return invalid("random_switch without a probability needs specs in methods");
                }
            }
        }
        for p in g.points() {
            g.run_config(p, 0)
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if let Some(e) = &self.endpoints {
            for c in [&e.draft, &e.target, &e.prm] {
                c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"
name = "t"
methods = ["specs", "beam_search(target)"]
[toy]
instance = "T2"
episodes = 5
[grid]
n = [2, 4]
tau = [0.7, 0.9]
gamma = [1]
horizon = 2
token_budget = 2
"#;

    #[test]
    fn beta_defaults_to_twice_the_budget() {
        let cfg = ExperimentConfig::from_toml(TOY).unwrap();
        assert_eq!(cfg.grid.betas(), vec![4.0]);
        assert_eq!(cfg.grid.points().len(), 4);
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(ExperimentConfig::from_toml("name = 3"), Err(ConfigError::Parse(_))));
        let both = format!("{TOY}\n[dataset]\npath = \"x\"\n");
        assert!(matches!(ExperimentConfig::from_toml(&both), Err(ConfigError::Invalid(_))));
        let bad_method = TOY.replace("\"specs\", ", "\"nope\", ");
        assert!(matches!(ExperimentConfig::from_toml(&bad_method), Err(ConfigError::Invalid(_))));
        let lonely = TOY.replace("\"specs\", ", "\"random_switch\", ");
        assert!(matches!(ExperimentConfig::from_toml(&lonely), Err(ConfigError::Invalid(_))));
        let zero = TOY.replace("n = [2, 4]", "n = [0]");
        assert!(matches!(ExperimentConfig::from_toml(&zero), Err(ConfigError::Invalid(_))));
    }
}
