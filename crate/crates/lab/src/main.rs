//! `fgle-lab`: run convergence studies from a JSON config.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fgle_core::experiments::{run_with_threads, StudyConfig, StudyKind};
use fgle_core::model::Drift;

#[derive(Parser)]
#[command(name = "fgle-lab", version, about = "Convergence studies for the fractional generalized Langevin equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// strong, density, malliavin or noise_validation
        #[arg(long)]
        study: Option<StudyKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        paths: Option<usize>,
        /// Output directory for the table and summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the drift presets.
    Presets,
    /// Print a default config for a study kind.
    Template {
        #[arg(long, default_value = "strong")]
        study: StudyKind,
        #[arg(long, default_value_t = 0.7)]
        alpha: f64,
        #[arg(long, default_value_t = 0.7)]
        hurst: f64,
    },
}

/// Worker cap from `FGLE_THREADS`, if set.
fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("FGLE_THREADS") {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("FGLE_THREADS must be a positive integer, got {v:?}"))?)),
        Err(_) => Ok(None),
    }
}

fn run(config: PathBuf, study: Option<StudyKind>, seed: Option<u64>, paths: Option<usize>, out: Option<PathBuf>) -> Result<bool> {
    let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg: StudyConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    if let Some(s) = study {
        cfg.study = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = paths {
        cfg.paths = m;
    }
    if let Some(o) = out {
        cfg.output = Some(o);
    }
    cfg.validate()?;
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("fgle-out").join(cfg.study.as_str()));
    let report = run_with_threads(&cfg, thread_cap()?)?;
    report.write(&dir).with_context(|| format!("writing {}", dir.display()))?;

    print!("{}", report.table_csv());
    if let Some(fit) = &report.fit {
        println!("slope {:.4} (r^2 {:.4})", fit.slope, fit.r_squared);
    }
    for c in &report.checks {
        println!("{} {}: {} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.detail);
    }
    for n in &report.notes {
        println!("note: {n}");
    }
    println!("{} in {:.1} s, outputs in {}", if report.pass { "PASS" } else { "FAIL" }, report.wall_clock_seconds, dir.display());
    Ok(report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, study, seed, paths, out } => run(config, study, seed, paths, out),
        Command::Presets => {
            for (name, formula) in Drift::presets() {
                println!("{name:<12} {formula}");
            }
            Ok(true)
        }
        Command::Template { study, alpha, hurst } => StudyConfig::preset(study, alpha, hurst).map(|c| {
            println!("{}", c.to_json());
            true
        }).map_err(Into::into),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
