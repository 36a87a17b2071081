use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use csbo_harness::config::{self, ExperimentConfig};
use csbo_harness::{emit_grid, emit_results, run_experiment, run_grid_search, verify};

#[derive(Parser)]
#[command(name = "csbo", version, about = "Contextual bilevel optimization via feature-map reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core), overriding the config.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured trials and write summary.csv, epochs.csv and config.json.
    Run { config: PathBuf },
    /// Grid-search step sizes, then run the trials with the selected cell.
    Grid { config: PathBuf },
    /// Run the oracle and property checks.
    Verify {
        /// Also run the traffic, hyper-cleaning and determinism experiments.
        #[arg(long)]
        full: bool,
    },
}

fn resolve(cli: &Cli, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = config::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_path = o.display().to_string();
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run { config } => {
            let cfg = resolve(&cli, config)?;
            let report = run_experiment(&cfg)?;
            emit_results(&report, cfg.output_path.as_ref())?;
            report_trials(&report);
            Ok(if report.complete() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Grid { config } => {
            let cfg = resolve(&cli, config)?;
            let grid = run_grid_search(&cfg)?;
            emit_grid(&grid, cfg.output_path.as_ref())?;
            let best = grid.best_cell();
            eprintln!("selected α={} β={} t_inner={} (score {})", best.alpha, best.beta, best.t_inner, best.score);
            let tuned = ExperimentConfig {
                solver: grid.best_solver(&cfg.solver),
                ..cfg
            };
            let report = run_experiment(&tuned)?;
            emit_results(&report, tuned.output_path.as_ref())?;
            report_trials(&report);
            Ok(if report.complete() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Verify { full } => {
            let mut results = verify::fast_suite();
            if *full {
                let scratch = std::env::temp_dir().join(format!("csbo-verify-{}", std::process::id()));
                results.push(verify::traffic_reproduction());
                results.push(verify::hyperclean_ordering());
                results.push(verify::determinism(&scratch));
                let _ = std::fs::remove_dir_all(&scratch);
            }
            results.sort_by_key(|c| c.id);
            for c in &results {
                println!("{c}");
            }
            Ok(if results.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn report_trials(report: &csbo_harness::ExperimentReport) {
    for t in &report.trials {
        if let Some(e) = &t.error {
            eprintln!("trial {} (seed {}) failed: {e}", t.trial, t.seed);
        }
        for w in &t.warnings {
            eprintln!("trial {}: {w}", t.trial);
        }
    }
    eprintln!(
        "{} of {} trials completed; results in {}",
        report.n_succeeded(),
        report.trials.len(),
        report.config.output_path
    );
}
