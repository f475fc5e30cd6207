//! Run reports: per-episode records, timings and aggregate rows.
//!
//! Episode records hold everything that is a deterministic function of the
//! config and seeds; wall-clock measurements live in separate timing records
//! keyed by the same `id`, so `episodes.jsonl` can be compared byte for byte
//! across reruns.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use specs_core::{RunConfig, StepLatency};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub id: usize,
    pub method: String,
    /// Index of the grid point the episode belongs to.
    pub point: usize,
    pub config: RunConfig,
    /// Target probability actually used by a random-switch method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_big: Option<f64>,
    pub run_seed: u64,
    pub prompt_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percent_big: Option<f64>,
    pub sources: String,
    pub steps: Vec<String>,
    pub step_rewards: Vec<f64>,
    pub widths: Vec<usize>,
    pub selected_scores: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub id: usize,
    pub wall_time: f64,
    pub per_step_latency: Vec<StepLatency>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub point: usize,
    pub n: usize,
    /// Empty for methods that ignore the threshold.
    pub tau: Option<f64>,
    pub gamma: usize,
    pub beta: f64,
    pub episodes: usize,
    pub errors: usize,
    pub accuracy: f64,
    /// Standard deviation of per-seed accuracy.
    pub accuracy_std: f64,
    pub mean_latency: f64,
    pub mean_latency_per_step: f64,
    pub percent_big: f64,
}

/// Mean seconds per step spent in each component, for one method and grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub method: String,
    pub point: usize,
    pub steps: usize,
    pub draft_generate: f64,
    pub target_generate: f64,
    pub target_score: f64,
    pub prm_score: f64,
    pub component_sum: f64,
    pub wall_step: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub episodes: Vec<EpisodeRecord>,
    pub timings: Vec<TimingRecord>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, count) = xs.into_iter().fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs.iter().copied());
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn uses_tau(method: &str) -> bool {
    method.starts_with("specs") || method == "random_switch"
}

impl RunReport {
    fn groups(&self) -> BTreeMap<(usize, String), Vec<usize>> {
        let mut out: BTreeMap<(usize, String), Vec<usize>> = BTreeMap::new();
        for (i, e) in self.episodes.iter().enumerate() {
            out.entry((e.point, e.method.clone())).or_default().push(i);
        }
        out
    }

    fn timing_index(&self) -> BTreeMap<usize, &TimingRecord> {
        self.timings.iter().map(|t| (t.id, t)).collect()
    }

    /// One row per (grid point, method), in grid then method-name order.
    ///
    /// Accuracy counts failed episodes as incorrect; latency and
    /// `percent_big` average over completed episodes.
    pub fn aggregates(&self) -> Vec<AggregateRow> {
        let timings = self.timing_index();
        self.groups()
            .into_iter()
            .map(|((point, method), idx)| {
                let eps: Vec<&EpisodeRecord> = idx.iter().map(|&i| &self.episodes[i]).collect();
                let ok: Vec<&EpisodeRecord> = eps.iter().copied().filter(|e| e.error.is_none()).collect();
                let mut per_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
                for e in &eps {
                    per_seed.entry(e.run_seed).or_default().push(f64::from(u8::from(e.correct)));
                }
                let seed_acc: Vec<f64> = per_seed.values().map(|v| mean(v.iter().copied())).collect();
                let walls: Vec<&TimingRecord> = ok.iter().filter_map(|e| timings.get(&e.id).copied()).collect();
                let steps: usize = walls.iter().map(|t| t.per_step_latency.len()).sum();
                let total_wall: f64 = walls.iter().map(|t| t.wall_time).sum();
                let cfg = &eps[0].config;
                AggregateRow {
                    tau: uses_tau(&method).then_some(cfg.tau),
                    method,
                    point,
                    n: cfg.n,
                    gamma: cfg.gamma,
                    beta: cfg.beta,
                    episodes: eps.len(),
                    errors: eps.len() - ok.len(),
                    accuracy: mean(eps.iter().map(|e| f64::from(u8::from(e.correct)))),
                    accuracy_std: std_dev(&seed_acc),
                    mean_latency: mean(walls.iter().map(|t| t.wall_time)),
                    mean_latency_per_step: if steps == 0 { 0.0 } else { total_wall / steps as f64 },
                    percent_big: mean(ok.iter().filter_map(|e| e.percent_big)),
                }
            })
            .collect()
    }

    /// Per-component mean seconds per step, by (grid point, method).
    pub fn latency_breakdown(&self) -> Vec<LatencyBreakdown> {
        let timings = self.timing_index();
        self.groups()
            .into_iter()
            .map(|((point, method), idx)| {
                let steps: Vec<&StepLatency> = idx
                    .iter()
                    .filter_map(|&i| timings.get(&self.episodes[i].id))
                    .flat_map(|t| t.per_step_latency.iter())
                    .collect();
                let avg = |f: fn(&StepLatency) -> f64| mean(steps.iter().map(|s| f(s)));
                LatencyBreakdown {
                    method,
                    point,
                    steps: steps.len(),
                    draft_generate: avg(|s| s.draft_generate),
                    target_generate: avg(|s| s.target_generate),
                    target_score: avg(|s| s.target_score),
                    prm_score: avg(|s| s.prm_score),
                    component_sum: avg(StepLatency::component_sum),
                    wall_step: avg(|s| s.wall_step),
                }
            })
            .collect()
    }

    pub fn episodes_jsonl(&self) -> String {
        jsonl(&self.episodes)
    }

    pub fn timings_jsonl(&self) -> String {
        jsonl(&self.timings)
    }

    /// Writes `episodes.jsonl`, `timings.jsonl`, `aggregate.csv` and
    /// `latency.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("episodes.jsonl"), self.episodes_jsonl())?;
        std::fs::write(dir.join("timings.jsonl"), self.timings_jsonl())?;
        write_csv(&dir.join("aggregate.csv"), &self.aggregates())?;
        write_csv(&dir.join("latency.csv"), &self.latency_breakdown())?;
        Ok(())
    }
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Renders rows as an aligned text table for the terminal.
pub fn format_table(rows: &[AggregateRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<22} {:>4} {:>6} {:>9} {:>8} {:>9} {:>11} {:>7}\n",
        "method", "n", "tau", "beta", "acc", "lat(s)", "lat/step(s)", "%big"
    ));
    for r in rows {
        let tau = r.tau.map_or("-".to_string(), |t| format!("{t}"));
        out.push_str(&format!(
            "{:<22} {:>4} {:>6} {:>9} {:>8.4} {:>9.4} {:>11.5} {:>7.3}\n",
            r.method, r.n, tau, r.beta, r.accuracy, r.mean_latency, r.mean_latency_per_step, r.percent_big
        ));
    }
    out
}
