//! Config-driven experiment runner. One TOML config names one experiment;
//! the run writes a CSV or JSON report and exits 0 only when every judged
//! row passed (2 on config errors, 3 on numerical or I/O failures, 1 on a
//! failed verdict).

mod config;
mod error;
mod report;
mod runner;

use std::path::PathBuf;

use clap::Parser;

use config::{resolve, ExperimentConfig, Overrides};
use report::emit_report;

/// Environment variable supplying the default worker count.
const WORKERS_VAR: &str = "EXITLAB_WORKERS";

#[derive(Parser)]
#[command(name = "exitlab", version, about = "Exit-time experiments from TOML configs")]
struct Cli {
    /// Path to the experiment config.
    config: PathBuf,

    /// Validate the config, print the resolved plan, and write nothing.
    #[arg(long)]
    dry_run: bool,

    /// Worker threads; overrides EXITLAB_WORKERS. Defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,

    /// Directory receiving the report file, replacing the directory part of
    /// the configured output path.
    #[arg(long)]
    output_dir: Option<PathBuf>,

    /// Seed override for stochastic experiments.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    std::process::exit(run(Cli::parse()));
}

fn run(cli: Cli) -> i32 {
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(text) => text,
        Err(source) => {
            eprintln!("error: cannot read config {}: {source}", cli.config.display());
            return 2;
        }
    };
    let parsed: ExperimentConfig = match toml::from_str(&text) {
        Ok(parsed) => parsed,
        Err(e) => {
            eprintln!("error: config parse error: {e}");
            return 2;
        }
    };
    let overrides = Overrides {
        seed: cli.seed,
        output_dir: cli.output_dir,
    };
    let plan = match resolve(&parsed, &overrides) {
        Ok(plan) => plan,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };

    let workers = cli.workers.or_else(|| {
        std::env::var(WORKERS_VAR)
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(n) = workers.filter(|&n| n > 0) {
        // Ignore a second initialization: tests drive `run` in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    if cli.dry_run {
        for line in &plan.summary {
            println!("{line}");
        }
        println!("dry run: nothing written");
        return 0;
    }

    let report = match runner::run(&plan) {
        Ok(report) => report,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    for row in &report.rows {
        match row.stderr {
            Some(se) => println!("{} = {} +/- {se} [{}]", row.quantity, row.value, row.verdict),
            None => println!("{} = {} [{}]", row.quantity, row.value, row.verdict),
        }
    }
    if let Err(e) = emit_report(&report, plan.format, &plan.destination) {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    println!("report written to {}", plan.destination.display());
    if report.any_failed() {
        1
    } else {
        0
    }
}
