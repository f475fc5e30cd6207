//! Runs every (grid point, method, seed, prompt) episode of a config.

use std::collections::BTreeMap;

use anyhow::Context;
use rayon::prelude::*;
use tracing::info;

use specs_core::instance::format_key;
use specs_core::rng::{derive_seed, Lane};
use specs_core::{Engine, Execution, MethodSpec, ToyInstance};

use crate::answer::{answers_match, extract_answer};
use crate::config::{ExperimentConfig, GridPoint};
use crate::dataset::Dataset;
use crate::models::{load_instance, ModelSet};
use crate::report::{uses_tau, EpisodeRecord, RunReport, TimingRecord};

/// How answers are judged.
enum Grader<'a> {
    Toy(&'a ToyInstance),
    Text,
}

struct Job {
    method: MethodSpec,
    label: String,
    point: usize,
    grid: GridPoint,
    seed: u64,
    prompt_index: usize,
}

/// Seed of one episode; shared by all methods so runs are matched.
pub fn episode_seed(run_seed: u64, prompt_index: usize) -> u64 {
    derive_seed(run_seed, prompt_index as u64, Lane::Candidate, u64::MAX)
}

fn label(m: &MethodSpec) -> String {
    match m {
        MethodSpec::RandomSwitch { p_big } if p_big.is_nan() => "random_switch".into(),
        other => other.to_string(),
    }
}

pub struct Experiment {
    pub config: ExperimentConfig,
    models: ModelSet,
    dataset: Dataset,
    instance: Option<ToyInstance>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> anyhow::Result<Self> {
        config.validate()?;
        if let Some(toy) = &config.toy {
            let inst = load_instance(&toy.instance)?;
            let dataset = Dataset::repeated(inst.name.clone(), &inst.name, toy.episodes);
            let models = ModelSet::toy(&inst, &toy.latency);
            return Ok(Self {
                config,
                models,
                dataset,
                instance: Some(inst),
            });
        }
        let source = config.dataset.as_ref().expect("validated: dataset present");
        let mut dataset = Dataset::load(&source.path)
            .with_context(|| format!("loading dataset {}", source.path.display()))?;
        if let Some(limit) = source.limit {
            dataset.truncate(limit);
        }
        let models = ModelSet::remote(config.endpoints.as_ref().expect("validated: endpoints present"))?;
        Ok(Self {
            config,
            models,
            dataset,
            instance: None,
        })
    }

    /// Runs against caller-supplied models and prompts.
    pub fn with_models(config: ExperimentConfig, models: ModelSet, dataset: Dataset) -> Self {
        Self {
            config,
            models,
            dataset,
            instance: None,
        }
    }

    fn jobs(&self, methods: &[MethodSpec]) -> Vec<Job> {
        let points = self.config.grid.points();
        let mut out = Vec::new();
        for (point, grid) in points.iter().enumerate() {
            for m in methods {
                let label = label(m);
                // Threshold-free methods run once per (n, gamma, beta).
                if !uses_tau(&label) && grid.tau != self.config.grid.tau[0] {
                    continue;
                }
                for &seed in &self.config.seeds {
                    for prompt_index in 0..self.dataset.len() {
                        out.push(Job {
                            method: *m,
                            label: label.clone(),
                            point,
                            grid: *grid,
                            seed,
                            prompt_index,
                        });
                    }
                }
            }
        }
        out
    }

    fn run_job(&self, engine: &Engine<'_>, grader: &Grader<'_>, job: &Job, id: usize) -> (EpisodeRecord, TimingRecord) {
        let grid = &self.config.grid;
        let cfg = grid.run_config(job.grid, episode_seed(job.seed, job.prompt_index));
        let record = &self.dataset.records[job.prompt_index];
        let p_big = match job.method {
            MethodSpec::RandomSwitch { p_big } => Some(p_big),
            _ => None,
        };
        let mut ep = EpisodeRecord {
            id,
            method: job.label.clone(),
            point: job.point,
            config: cfg.clone(),
            p_big,
            run_seed: job.seed,
            prompt_index: job.prompt_index,
            percent_big: None,
            sources: String::new(),
            steps: Vec::new(),
            step_rewards: Vec::new(),
            widths: Vec::new(),
            selected_scores: Vec::new(),
            answer: None,
            correct: false,
            error: None,
        };
        let mut timing = TimingRecord {
            id,
            wall_time: 0.0,
            per_step_latency: Vec::new(),
        };
        match engine.run(job.method, &record.prompt, &cfg) {
            Ok(res) => {
                ep.percent_big = Some(res.percent_big);
                ep.sources = res.trace.source_string();
                ep.steps = res.trace.step_texts();
                ep.step_rewards = res.step_rewards.clone();
                ep.widths = res.widths.clone();
                ep.selected_scores = res.selected_scores.clone();
                match grader {
                    Grader::Toy(inst) => {
                        if let Some(sym) = res.trace.symbols() {
                            ep.correct = inst.is_correct(&sym);
                            ep.answer = Some(format_key(&sym));
                        }
                    }
                    Grader::Text => {
                        let body: String = ep.steps.concat();
                        ep.answer = extract_answer(&body).ok();
                        ep.correct = match (&ep.answer, &record.answer) {
                            (Some(a), Some(r)) => answers_match(a, r),
                            _ => false,
                        };
                    }
                }
                timing.wall_time = res.wall_time();
                timing.per_step_latency = res.per_step_latency;
            }
            Err(e) => ep.error = Some(e.to_string()),
        }
        (ep, timing)
    }

    fn run_phase(&self, jobs: &[Job], first_id: usize, report: &mut RunReport) -> anyhow::Result<()> {
        let engine = Engine::new(self.models.draft.as_ref(), self.models.target.as_ref(), self.models.prm.as_ref())
            .with_execution(self.config.execution);
        let grader = match &self.instance {
            Some(inst) => Grader::Toy(inst),
            None => Grader::Text,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
            .context("building worker pool")?;
        let results: Vec<(EpisodeRecord, TimingRecord)> = pool.install(|| {
            jobs.par_iter()
                .enumerate()
                .map(|(i, job)| self.run_job(&engine, &grader, job, first_id + i))
                .collect()
        });
        for (e, t) in results {
            report.episodes.push(e);
            report.timings.push(t);
        }
        Ok(())
    }

    /// Runs all episodes. Bare `random_switch` methods run after the others,
    /// using the matching `specs` row's mean `percent_big`.
    pub fn run(&self) -> anyhow::Result<RunReport> {
        let methods = self.config.parsed_methods()?;
        let (deferred, direct): (Vec<MethodSpec>, Vec<MethodSpec>) = methods
            .into_iter()
            .partition(|m| matches!(m, MethodSpec::RandomSwitch { p_big } if p_big.is_nan()));
        let mut report = RunReport {
            name: self.config.name.clone(),
            ..RunReport::default()
        };
        let jobs = self.jobs(&direct);
        info!(episodes = jobs.len(), "running");
        self.run_phase(&jobs, 0, &mut report)?;

        if !deferred.is_empty() {
            let specs_big: BTreeMap<usize, f64> = report
                .aggregates()
                .into_iter()
                .filter(|r| r.method == "specs")
                .map(|r| (r.point, r.percent_big))
                .collect();
            let mut jobs = self.jobs(&deferred);
            for job in &mut jobs {
                job.method = MethodSpec::RandomSwitch {
                    p_big: specs_big.get(&job.point).copied().unwrap_or(0.0),
                };
            }
            info!(episodes = jobs.len(), "running matched random switch");
            let first = report.episodes.len();
            self.run_phase(&jobs, first, &mut report)?;
        }
        Ok(report)
    }

    pub fn execution(&self) -> Execution {
        self.config.execution
    }
}
