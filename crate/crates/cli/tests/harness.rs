use std::path::PathBuf;

use specs_cli::config::ExperimentConfig;
use specs_cli::{ConfigError, Experiment, RunReport};
use specs_client::{MockServer, Scenario};

fn data(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(path)
}

const TOY: &str = r#"
name = "toy"
seeds = [0, 1]
methods = ["specs", "beam_search(target)", "beam_search(draft)", "rsd++", "random_switch", "only_small_gen"]

[toy]
instance = "T2"
episodes = 40

[grid]
n = [4]
tau = [-0.2, 0.0, 0.3]
gamma = [1]
beta = [1.0]
horizon = 2
token_budget = 2
"#;

fn toy(text: &str) -> RunReport {
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    Experiment::new(cfg).unwrap().run().unwrap()
}

#[test]
fn aggregates_match_episode_records() {
    let report = toy(TOY);
    let rows = report.aggregates();
    for row in &rows {
        let eps: Vec<_> = report
            .episodes
            .iter()
            .filter(|e| e.method == row.method && e.point == row.point)
            .collect();
        assert_eq!(eps.len(), row.episodes);
        assert_eq!(row.episodes, 2 * 40);
        let acc = eps.iter().filter(|e| e.correct).count() as f64 / eps.len() as f64;
        assert!((acc - row.accuracy).abs() < 1e-12, "{}", row.method);
        let pb = eps.iter().map(|e| e.percent_big.unwrap()).sum::<f64>() / eps.len() as f64;
        assert!((pb - row.percent_big).abs() < 1e-12);
        assert_eq!(row.errors, 0);
    }
    let count = |m: &str| rows.iter().filter(|r| r.method == m).count();
    assert_eq!(count("specs"), 3);
    assert_eq!(count("random_switch"), 3);
    assert_eq!(count("beam_search(target)"), 1);
    assert_eq!(count("rsd++"), 1);
    let bs_target = rows.iter().find(|r| r.method == "beam_search(target)").unwrap();
    assert_eq!(bs_target.percent_big, 1.0);
    assert!(bs_target.tau.is_none());
    let small = rows.iter().find(|r| r.method == "only_small_gen").unwrap();
    assert_eq!(small.percent_big, 0.0);
}

#[test]
fn random_switch_matches_specs_target_share() {
    let report = toy(TOY);
    let rows = report.aggregates();
    for specs in rows.iter().filter(|r| r.method == "specs") {
        let p = report
            .episodes
            .iter()
            .find(|e| e.method == "random_switch" && e.point == specs.point)
            .and_then(|e| e.p_big)
            .unwrap();
        assert!((p - specs.percent_big).abs() < 1e-12);
    }
}

#[test]
fn beta_defaults_to_twice_token_budget() {
    let text = TOY.replace("beta = [1.0]\n", "").replace("token_budget = 2", "token_budget = 3");
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(cfg.grid.betas(), vec![6.0]);
    let report = Experiment::new(cfg).unwrap().run().unwrap();
    assert!(report.episodes.iter().all(|e| e.config.beta == 6.0));
    assert!(report.aggregates().iter().all(|r| r.beta == 6.0));
}

#[test]
fn tau_sweep_yields_one_specs_row_per_threshold() {
    let mut cfg = ExperimentConfig::from_toml(TOY).unwrap();
    cfg.methods = vec!["specs".into(), "beam_search(target)".into()];
    cfg.grid.tau = vec![-0.5, 0.1, 0.6];
    let rows = Experiment::new(cfg).unwrap().run().unwrap().aggregates();
    let taus: Vec<f64> = rows.iter().filter(|r| r.method == "specs").map(|r| r.tau.unwrap()).collect();
    assert_eq!(taus, vec![-0.5, 0.1, 0.6]);
    let shares: Vec<f64> = rows.iter().filter(|r| r.method == "specs").map(|r| r.percent_big).collect();
    // A higher threshold never switches earlier.
    assert!(shares.windows(2).all(|w| w[0] <= w[1]), "{shares:?}");
}

const TIMED: &str = r#"
name = "timed"
seeds = [0]
execution = "EXEC"
methods = ["specs", "beam_search(target)"]

[toy]
instance = "T2"
episodes = 5

[toy.latency.target]
sample_ms = 2.0
logprob_ms = 1.0

[toy.latency.draft]
sample_ms = 0.5
logprob_ms = 0.25

[toy.latency.prm]
score_ms = 0.5

[grid]
n = [4]
tau = [0.0]
gamma = [1]
beta = [1.0]
horizon = 2
token_budget = 2
"#;

#[test]
fn latency_breakdown_attributes_components() {
    let report = toy(&TIMED.replace("EXEC", "sequential"));
    let rows = report.latency_breakdown();
    let bs = rows.iter().find(|r| r.method == "beam_search(target)").unwrap();
    assert_eq!(bs.draft_generate, 0.0);
    assert_eq!(bs.target_score, 0.0);
    assert!(bs.target_generate >= 4.0 * 2.0e-3);
    assert!(bs.prm_score >= 4.0 * 0.5e-3);
    for r in &rows {
        assert!((r.component_sum - r.wall_step).abs() <= 0.05 * r.wall_step, "{r:?}");
    }
}

#[test]
fn concurrent_calls_overlap() {
    let seq = toy(&TIMED.replace("EXEC", "sequential")).latency_breakdown();
    let conc = toy(&TIMED.replace("EXEC", "concurrent")).latency_breakdown();
    let bs = |rows: &[specs_cli::LatencyBreakdown]| {
        rows.iter().find(|r| r.method == "beam_search(target)").unwrap().wall_step
    };
    assert!(bs(&conc) < 0.6 * bs(&seq), "{} vs {}", bs(&conc), bs(&seq));
}

#[test]
fn report_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let report = toy(TOY);
    report.write(dir.path()).unwrap();
    for f in ["episodes.jsonl", "timings.jsonl", "aggregate.csv", "latency.csv"] {
        assert!(dir.path().join(f).metadata().unwrap().len() > 0, "{f}");
    }
    let lines = std::fs::read_to_string(dir.path().join("episodes.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), report.episodes.len());
    let csv = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(csv.lines().count(), report.aggregates().len() + 1);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        TOY.replace("\"specs\", ", ""),
        TOY.replace("\"rsd++\"", "\"rsd+++\""),
        TOY.replace("n = [4]", "n = [0]"),
        TOY.replace("seeds = [0, 1]", "seeds = []"),
        TOY.replace("[toy]\ninstance = \"T2\"\nepisodes = 40\n", ""),
    ];
    for text in &bad {
        let err = ExperimentConfig::from_toml(text).and_then(|c| c.validate().map(|_| c));
        assert!(err.is_err(), "accepted:\n{text}");
    }
    assert!(matches!(
        ExperimentConfig::from_toml("name = 3"),
        Err(ConfigError::Parse(_))
    ));
    assert!(ExperimentConfig::load(data("configs/missing.toml")).is_err());
}

#[test]
fn bundled_configs_load() {
    for f in ["toy_t2.toml", "toy_t1_ablations.toml", "mock_math.toml"] {
        let cfg = ExperimentConfig::load(data("configs").join(f)).unwrap();
        cfg.validate().unwrap();
    }
}

#[test]
fn dataset_run_against_mock_endpoint() {
    let server = MockServer::start(Scenario::load(data("scenarios/math_small.json")).unwrap()).unwrap();
    let mut cfg = ExperimentConfig::load(data("configs/mock_math.toml")).unwrap();
    for e in cfg.endpoints.iter_mut().flat_map(|e| [&mut e.draft, &mut e.target, &mut e.prm]) {
        e.base_url = server.base_url();
    }
    cfg.dataset.as_mut().unwrap().limit = Some(3);
    let report = Experiment::new(cfg).unwrap().run().unwrap();
    assert_eq!(report.episodes.len(), 3 * 3);
    assert!(report.episodes.iter().all(|e| e.error.is_none()), "{:?}", report.episodes);
    assert!(report.episodes.iter().all(|e| e.answer.is_some()));
    let rows = report.aggregates();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
    // 42 is the first reference answer and the only one the scenario can produce.
    let first: Vec<_> = report.episodes.iter().filter(|e| e.prompt_index == 0).collect();
    assert!(first.iter().any(|e| e.correct));
    assert!(report.episodes.iter().filter(|e| e.prompt_index > 0).all(|e| !e.correct));
}

#[test]
fn theory_command_reports_checks() {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_specs"))
        .args(["theory", "T1", "--n", "8,16,32"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let checks = json["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).count(), checks.len());
}

#[test]
fn run_command_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, TOY).unwrap();
    let out_dir = dir.path().join("out");
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_specs"))
        .args(["run", cfg_path.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--workers", "2"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(out_dir.join("aggregate.csv").exists());
}
