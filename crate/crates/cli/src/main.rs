use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use specs_cli::config::ExperimentConfig;
use specs_cli::models::load_instance;
use specs_cli::report::format_table;
use specs_cli::theory::{theory_suite, DEFAULT_N};
use specs_cli::Experiment;
use specs_client::{MockServer, Scenario};

#[derive(Parser)]
#[command(name = "specs", version, about = "Speculative block-level test-time scaling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method and grid point of a config.
    Run {
        config: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run a config with the threshold and width lists replaced.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        tau: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle validation suite on a toy instance.
    Theory {
        /// Bundled fixture (T1, T2, LB(4)) or instance file.
        instance: String,
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a mock completion/PRM endpoint from a scenario file.
    ServeMock {
        scenario: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8000")]
        addr: SocketAddr,
    },
}

fn run_config(mut cfg: ExperimentConfig, out: Option<PathBuf>) -> anyhow::Result<()> {
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    let dir = cfg.output_dir.clone();
    let experiment = Experiment::new(cfg)?;
    let report = experiment.run()?;
    report.write(&dir).with_context(|| format!("writing report to {}", dir.display()))?;
    print!("{}", format_table(&report.aggregates()));
    println!("wrote {}", dir.display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run { config, out, workers } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            run_config(cfg, out)
        }
        Command::Sweep { config, tau, n, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if !tau.is_empty() {
                cfg.grid.tau = tau;
            }
            if !n.is_empty() {
                cfg.grid.n = n;
            }
            cfg.validate()?;
            run_config(cfg, out)
        }
        Command::Theory { instance, n, out } => {
            let inst = load_instance(&instance)?;
            let ns = if n.is_empty() { DEFAULT_N.to_vec() } else { n };
            let report = theory_suite(&inst, &ns);
            for c in &report.checks {
                eprintln!(
                    "{} {:<32} {:>14.6e} {} {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.criterion,
                    c.detail
                );
            }
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => std::fs::write(&path, json)?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::ServeMock { scenario, addr } => {
            let sc = Scenario::load(&scenario)?;
            let server = MockServer::start_on(sc, addr)?;
            eprintln!("mock endpoint on {}", server.base_url());
            server.wait()?;
            Ok(())
        }
    }
}
