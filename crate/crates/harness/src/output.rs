//! CSV and JSON artifacts of an experiment.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::experiment::{mean_ci95, ExperimentReport, GridReport};

pub const SUMMARY: &str = "summary.csv";
pub const EPOCHS: &str = "epochs.csv";
pub const SMOOTHED: &str = "epochs_smoothed.csv";
pub const TRIALS: &str = "trials.csv";
pub const GRID: &str = "grid.csv";
pub const CONFIG: &str = "config.json";

const METRICS: [&str; 7] = [
    "test_loss",
    "reference_loss",
    "delta_y",
    "delta_x",
    "val_loss",
    "test_loss_reduced",
    "wall_time",
];

#[derive(Serialize)]
struct SummaryRow<'a> {
    problem: &'a str,
    basis: &'a str,
    n_basis: usize,
    metric: &'a str,
    mean: f64,
    ci95_low: f64,
    ci95_high: f64,
    n_trials: usize,
}

#[derive(Serialize)]
struct EpochRow {
    trial: usize,
    epoch: usize,
    train_loss: f64,
    val_loss: Option<f64>,
    grad_norm: f64,
    wall_time: f64,
}

#[derive(Serialize)]
struct SmoothedRow {
    trial: usize,
    epoch: usize,
    train_loss: f64,
    val_loss: Option<f64>,
}

#[derive(Serialize)]
struct TrialRow<'a> {
    trial: usize,
    seed: u64,
    status: &'a str,
    selection_loss: f64,
    error: &'a str,
}

#[derive(Serialize)]
struct GridRow {
    alpha: f64,
    beta: f64,
    t_inner: usize,
    score: f64,
    failures: usize,
    selected: bool,
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<fs::File>> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))
}

/// Writes `headers` explicitly so empty tables still carry them.
fn write_rows<T: Serialize>(dir: &Path, name: &str, headers: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(dir.join(name))
        .with_context(|| format!("creating {}", dir.join(name).display()))?;
    w.write_record(headers)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Trailing moving average with the given window.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

pub fn emit_results(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let cfg = &report.config;
    let problem = serde_json::to_value(cfg.problem)?;
    let problem = problem.as_str().unwrap_or_default();

    let mut summary = Vec::new();
    for metric in METRICS {
        let values = report.metric(metric);
        if values.is_empty() {
            continue;
        }
        let (mean, lo, hi) = mean_ci95(&values);
        summary.push(SummaryRow {
            problem,
            basis: cfg.basis.name(),
            n_basis: cfg.n_basis,
            metric,
            mean,
            ci95_low: lo,
            ci95_high: hi,
            n_trials: values.len(),
        });
    }
    write_rows(
        dir,
        SUMMARY,
        &["problem", "basis", "n_basis", "metric", "mean", "ci95_low", "ci95_high", "n_trials"],
        &summary,
    )?;

    let mut epochs = Vec::new();
    let mut smoothed = Vec::new();
    let window = cfg.smoothing_window();
    for t in &report.trials {
        for r in &t.records {
            epochs.push(EpochRow {
                trial: t.trial,
                epoch: r.epoch,
                train_loss: r.upper_loss_train,
                val_loss: r.upper_loss_val,
                grad_norm: r.grad_norm,
                wall_time: r.wall_time,
            });
        }
        let train: Vec<f64> = t.records.iter().map(|r| r.upper_loss_train).collect();
        let val: Option<Vec<f64>> = t.records.iter().map(|r| r.upper_loss_val).collect();
        let train = moving_average(&train, window);
        let val = val.map(|v| moving_average(&v, window));
        for (i, r) in t.records.iter().enumerate() {
            smoothed.push(SmoothedRow {
                trial: t.trial,
                epoch: r.epoch,
                train_loss: train[i],
                val_loss: val.as_ref().map(|v| v[i]),
            });
        }
    }
    write_rows(
        dir,
        EPOCHS,
        &["trial", "epoch", "train_loss", "val_loss", "grad_norm", "wall_time"],
        &epochs,
    )?;
    write_rows(dir, SMOOTHED, &["trial", "epoch", "train_loss", "val_loss"], &smoothed)?;

    let trials: Vec<TrialRow> = report
        .trials
        .iter()
        .map(|t| TrialRow {
            trial: t.trial,
            seed: t.seed,
            status: if t.ok() { "ok" } else { "failed" },
            selection_loss: t.selection_loss,
            error: t.error.as_deref().unwrap_or(""),
        })
        .collect();
    write_rows(dir, TRIALS, &["trial", "seed", "status", "selection_loss", "error"], &trials)?;

    let config = dir.join(CONFIG);
    fs::write(&config, cfg.to_json() + "\n").with_context(|| format!("writing {}", config.display()))?;
    Ok(())
}

pub fn emit_grid(grid: &GridReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut w = writer(dir, GRID)?;
    for (i, c) in grid.cells.iter().enumerate() {
        w.serialize(GridRow {
            alpha: c.alpha,
            beta: c.beta,
            t_inner: c.t_inner,
            score: c.score,
            failures: c.failures,
            selected: i == grid.best,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    #[test]
    fn trailing_average() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        assert_eq!(moving_average(&[1.0, 3.0], 1), vec![1.0, 3.0]);
    }

    #[test]
    fn empty_report_gives_header_only_tables() {
        let dir = tempfile::tempdir().unwrap();
        let report = ExperimentReport {
            config: ExperimentConfig::default(),
            trials: Vec::new(),
        };
        emit_results(&report, dir.path()).unwrap();
        let summary = fs::read_to_string(dir.path().join(SUMMARY)).unwrap();
        assert_eq!(summary, "problem,basis,n_basis,metric,mean,ci95_low,ci95_high,n_trials\n");
        let epochs = fs::read_to_string(dir.path().join(EPOCHS)).unwrap();
        assert_eq!(epochs, "trial,epoch,train_loss,val_loss,grad_norm,wall_time\n");
    }
}
