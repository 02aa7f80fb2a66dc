use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use erwg::experiment::{
    analysis, limits_output, read_report, simulation, verification, write_analysis, write_limits, write_simulation,
    write_verification, ExperimentConfig,
};
use erwg::simulator::Mechanism;
use erwg::verify::Suite;

/// Elephant random walks on graphs: analysis, simulation and verification.
#[derive(Parser, Debug)]
#[command(name = "erwg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the spectrum, regime and limiting quantities of a walk.
    Analyze(Common),
    /// Simulate an ensemble and write its checkpoints as CSV.
    Simulate(Common),
    /// Run a verification suite; exits with status 1 on any hard failure.
    Verify(Common),
    /// Write the limit report and the exact moment table.
    Limits(Common),
    /// Print the table of a saved report.json; exits with status 1 on any hard failure.
    Report {
        /// A report.json file, or a directory containing one.
        path: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment file, or a bare walk file with k, edges, p and q.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Size of the replica pool; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_mechanism)]
    mechanism: Option<Mechanism>,
    #[arg(long, value_parser = parse_suite)]
    suite: Option<Suite>,
    /// Tolerance override, repeatable.
    #[arg(long = "tol", value_name = "KEY=VAL", value_parser = parse_tol)]
    tol: Vec<(String, f64)>,
    /// Also print JSON to stdout instead of the table.
    #[arg(long)]
    json: bool,
}

fn parse_mechanism(s: &str) -> std::result::Result<Mechanism, String> {
    s.parse().map_err(|e: erwg::Error| e.to_string())
}

fn parse_suite(s: &str) -> std::result::Result<Suite, String> {
    s.parse().map_err(|e: erwg::Error| e.to_string())
}

fn parse_tol(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VAL, got {s:?}"))?;
    let v: f64 = v.parse().map_err(|e| format!("{k}: {e}"))?;
    Ok((k.to_string(), v))
}

impl Common {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg =
            ExperimentConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(r) = self.replicas {
            cfg.replicas = r;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if let Some(m) = self.mechanism {
            cfg.mechanism = m;
        }
        if let Some(s) = self.suite {
            cfg.suite = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        for (k, v) in &self.tol {
            cfg.tolerances.insert(k.clone(), *v);
        }
        cfg.validate()?;
        if self.workers == Some(0) {
            bail!("--workers must be positive");
        }
        Ok(cfg)
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match writeln!(out, "{}", text.trim_end_matches('\n')).and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn announce(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Analyze(c) => {
            let cfg = c.experiment()?;
            let a = analysis(&cfg)?;
            emit(&if c.json { a.to_json() } else { a.table() })?;
            if let Some(dir) = &cfg.output_dir {
                announce(&write_analysis(&cfg, &a, dir)?);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate(c) => {
            let cfg = c.experiment()?;
            let dir = cfg.output_dir.clone().context("simulate needs --out or output_dir")?;
            let s = simulation(&cfg, c.workers)?;
            announce(&write_simulation(&cfg, &s, &dir)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(c) => {
            let cfg = c.experiment()?;
            let r = verification(&cfg, c.workers)?;
            emit(&if c.json { r.to_json() } else { r.table() })?;
            if let Some(dir) = &cfg.output_dir {
                announce(&write_verification(&cfg, &r, dir)?);
            }
            Ok(if r.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Limits(c) => {
            let cfg = c.experiment()?;
            let l = limits_output(&cfg)?;
            emit(&l.report.to_json())?;
            if let Some(dir) = &cfg.output_dir {
                announce(&write_limits(&cfg, &l, dir)?);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { path } => {
            let file = if path.is_dir() { path.join("report.json") } else { path };
            let r = read_report(Path::new(&file)).with_context(|| format!("reading {}", file.display()))?;
            emit(&r.table())?;
            Ok(if r.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
