//! Toy instance files.
//!
//! An instance is a JSON document describing a finite problem: target and
//! draft next-symbol tables, an outcome reward per full response, and the PRM
//! the engine should use. Prefixes and responses are written as
//! comma-separated symbol lists (`""` is the empty prefix, `"0,1"` a
//! two-block prefix).
//!
//! ```json
//! {
//!   "name": "T1",
//!   "alphabet": 2,
//!   "horizon": 1,
//!   "beta": 1.0,
//!   "target": { "": [0.8, 0.2] },
//!   "draft":  { "": [0.6, 0.4] },
//!   "reward": { "0": 0.0, "1": 1.3862943611198906 },
//!   "prm": "outcome"
//! }
//! ```
//!
//! `prm` is `"idealized"` (the KL-regularised advantage under the target),
//! `"outcome"` (single-block instances only: the reward itself), or an
//! explicit table `{ prefix: [score per symbol] }`. It defaults to
//! `"outcome"` when `horizon == 1` and `"idealized"` otherwise. `draft`
//! defaults to the target table and `correct` (responses counted as solved)
//! defaults to the reward maximisers.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle;
use crate::policy::{enumerate_responses, ModelError, ResponseReward, TabularPolicy, TabularPrm};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("reading instance file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing instance file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("bad symbol list {0:?}")]
    BadKey(String),
    #[error("reward missing for response {0:?}")]
    MissingReward(Vec<u32>),
    #[error("outcome PRM requires a single-block instance")]
    OutcomePrmNeedsSingleBlock,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PrmSpec {
    Named(PrmKind),
    Table(BTreeMap<String, Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrmKind {
    Idealized,
    Outcome,
}

/// On-disk form of a toy instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub name: String,
    pub alphabet: usize,
    pub horizon: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub target: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draft: Option<BTreeMap<String, Vec<f64>>>,
    pub reward: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prm: Option<PrmSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prm_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<Vec<String>>,
}

fn default_beta() -> f64 {
    1.0
}

pub fn parse_key(key: &str) -> Result<Vec<u32>, InstanceError> {
    let key = key.trim();
    if key.is_empty() {
        return Ok(Vec::new());
    }
    key.split(',')
        .map(|s| s.trim().parse::<u32>().map_err(|_| InstanceError::BadKey(key.to_string())))
        .collect()
}

pub fn format_key(symbols: &[u32]) -> String {
    symbols
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_rows(rows: &BTreeMap<String, Vec<f64>>) -> Result<BTreeMap<Vec<u32>, Vec<f64>>, InstanceError> {
    rows.iter()
        .map(|(k, v)| Ok((parse_key(k)?, v.clone())))
        .collect()
}

fn format_rows(rows: &BTreeMap<Vec<u32>, Vec<f64>>) -> BTreeMap<String, Vec<f64>> {
    rows.iter().map(|(k, v)| (format_key(k), v.clone())).collect()
}

/// A parsed, validated toy instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyInstance {
    pub name: String,
    pub target: TabularPolicy,
    pub draft: TabularPolicy,
    pub reward: ResponseReward,
    pub prm: TabularPrm,
    pub beta: f64,
    /// Responses counted as correct when scoring accuracy.
    pub correct: Vec<Vec<u32>>,
}

impl ToyInstance {
    pub fn alphabet(&self) -> usize {
        self.target.alphabet()
    }

    pub fn horizon(&self) -> usize {
        self.target.horizon()
    }

    pub fn is_correct(&self, response: &[u32]) -> bool {
        self.correct.iter().any(|c| c == response)
    }

    /// The same instance with the draft replaced by the target.
    pub fn with_identical_draft(&self) -> Self {
        let mut out = self.clone();
        out.draft = self.target.clone();
        out.name = format!("{}-identical", self.name);
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, InstanceError> {
        let text = std::fs::read_to_string(path)?;
        let file: InstanceFile = serde_json::from_str(&text)?;
        file.build()
    }

    pub fn to_file(&self) -> InstanceFile {
        let responses = enumerate_responses(self.alphabet(), self.horizon());
        InstanceFile {
            name: self.name.clone(),
            alphabet: self.alphabet(),
            horizon: self.horizon(),
            beta: self.beta,
            target: format_rows(self.target.rows()),
            draft: Some(format_rows(self.draft.rows())),
            reward: responses
                .iter()
                .map(|r| (format_key(r), self.reward.get(r)))
                .collect(),
            prm: Some(PrmSpec::Table(format_rows(self.prm.entries()))),
            prm_range: Some(crate::policy::RewardModel::reward_range(&self.prm)),
            correct: Some(self.correct.iter().map(|c| format_key(c)).collect()),
        }
    }
}

impl InstanceFile {
    pub fn build(&self) -> Result<ToyInstance, InstanceError> {
        let target = TabularPolicy::new(
            format!("{}-target", self.name),
            self.alphabet,
            self.horizon,
            parse_rows(&self.target)?,
        )?;
        let draft = match &self.draft {
            Some(rows) => TabularPolicy::new(
                format!("{}-draft", self.name),
                self.alphabet,
                self.horizon,
                parse_rows(rows)?,
            )?,
            None => target.clone(),
        };
        let keyed: BTreeMap<Vec<u32>, f64> = self
            .reward
            .iter()
            .map(|(k, v)| Ok((parse_key(k)?, *v)))
            .collect::<Result<_, InstanceError>>()?;
        let responses = enumerate_responses(self.alphabet, self.horizon);
        let values = responses
            .iter()
            .map(|r| keyed.get(r).copied().ok_or_else(|| InstanceError::MissingReward(r.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let reward = ResponseReward::new(self.alphabet, self.horizon, values)?;
        let spec = self.prm.clone().unwrap_or(PrmSpec::Named(if self.horizon == 1 {
            PrmKind::Outcome
        } else {
            PrmKind::Idealized
        }));
        let prm = match spec {
            PrmSpec::Named(PrmKind::Outcome) => {
                if self.horizon != 1 {
                    return Err(InstanceError::OutcomePrmNeedsSingleBlock);
                }
                TabularPrm::from_outcome(&reward)?
            }
            PrmSpec::Named(PrmKind::Idealized) => {
                oracle::idealized_prm(&target, &reward, self.beta)?.to_prm()?
            }
            PrmSpec::Table(rows) => {
                let rows = parse_rows(&rows)?;
                match self.prm_range {
                    Some(range) => TabularPrm::new(self.alphabet, rows, range)?,
                    None => TabularPrm::with_tight_range(self.alphabet, rows)?,
                }
            }
        };
        let correct = match &self.correct {
            Some(list) => list.iter().map(|k| parse_key(k)).collect::<Result<_, _>>()?,
            None => {
                let best = reward.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                responses
                    .into_iter()
                    .filter(|r| reward.get(r) == best)
                    .collect()
            }
        };
        Ok(ToyInstance {
            name: self.name.clone(),
            target,
            draft,
            reward,
            prm,
            beta: self.beta,
            correct,
        })
    }
}
