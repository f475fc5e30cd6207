//! Experiment harness: configuration, datasets, answer grading, the
//! experiment runner, reports and the oracle validation suite.

pub mod answer;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod models;
pub mod report;
pub mod theory;

pub use answer::{extract_answer, normalize_answer, NoAnswerFound};
pub use config::{ConfigError, ExperimentConfig};
pub use dataset::{Dataset, DatasetError};
pub use experiment::Experiment;
pub use report::{AggregateRow, EpisodeRecord, LatencyBreakdown, RunReport, TimingRecord};
pub use theory::{theory_suite, Check, TheoryReport};
