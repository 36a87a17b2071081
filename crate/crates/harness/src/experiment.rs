//! Seeded trials, metrics and grid search.

use std::time::Instant;

use anyhow::{bail, Context, Result};
use csbo_core::basis::{self, FeatureMap};
use csbo_core::oracle::{lower_solutions, mean_residual, upper_value};
use csbo_core::problem::{
    CsboProblem, HypercleanProblem, JointSample, LabelledData, QuadraticProblem, TrafficProblem,
};
use csbo_core::reduction::ReducedSbo;
use csbo_core::rng::{self, streams};
use csbo_core::solver::{run_with, Clock, EpochRecord, NoClock, RunOptions};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ProblemKind, SolverSection};
use crate::data;

/// Seconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct InstantClock(Instant);

impl InstantClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Clock for InstantClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

pub enum Instance {
    Quadratic(QuadraticProblem),
    Traffic(TrafficProblem),
    Hyperclean(HypercleanProblem),
}

impl Instance {
    pub fn problem(&self) -> &dyn CsboProblem {
        match self {
            Instance::Quadratic(p) => p,
            Instance::Traffic(p) => p,
            Instance::Hyperclean(p) => p,
        }
    }
}

pub type Dataset = (LabelledData, LabelledData);

pub fn build_instance(cfg: &ExperimentConfig, seed: u64, dataset: Option<&Dataset>) -> Result<Instance> {
    Ok(match cfg.problem {
        ProblemKind::Quadratic => Instance::Quadratic(QuadraticProblem::new(
            cfg.quadratic.d_x,
            cfg.quadratic.d_y,
            seed,
            cfg.quadratic.params(),
        )?),
        ProblemKind::Traffic => Instance::Traffic(TrafficProblem::new(seed, cfg.traffic.params())?),
        ProblemKind::Hyperclean => {
            let params = cfg.hyperclean.params(cfg.n_train);
            Instance::Hyperclean(match dataset {
                Some((train, val)) => HypercleanProblem::from_dataset(train.clone(), val.clone(), params, seed)?,
                None => HypercleanProblem::synthetic(params, seed)?,
            })
        }
    })
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Option<Dataset>> {
    match &cfg.data_path {
        None => Ok(None),
        Some(path) => data::load_split(
            path.as_ref(),
            cfg.data_format,
            cfg.data_columns,
            cfg.n_train,
            cfg.hyperclean.n_val,
        )
        .map(Some),
    }
}

/// Seed of an auxiliary sample set, derived from the trial seed.
fn derived_seed(seed: u64, stream: u64) -> u64 {
    rng::stream(seed, stream).random()
}

pub struct TrialData {
    pub train: Vec<JointSample>,
    pub validation: Vec<JointSample>,
    pub test: Vec<JointSample>,
}

pub fn trial_data(cfg: &ExperimentConfig, problem: &dyn CsboProblem, seed: u64) -> Result<TrialData> {
    Ok(TrialData {
        train: problem.sample_joint(cfg.n_train, seed)?,
        validation: problem.sample_joint(cfg.n_test, derived_seed(seed, streams::VALIDATION))?,
        test: problem.sample_joint(cfg.n_test, derived_seed(seed, streams::TEST))?,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialMetrics {
    /// `F(x̄)` on the test set with exact lower-level solves.
    pub test_loss: Option<f64>,
    /// `mean ‖y⋆(x̄, ξ) − W̄Φ(ξ)‖²` over the test contexts.
    pub delta_y: Option<f64>,
    /// `‖x̄ − x⋆‖²`.
    pub delta_x: Option<f64>,
    /// `F(x⋆)` on the test set.
    pub reference_loss: Option<f64>,
    /// Reduced upper loss `mean f_Φ(x̄, W̄)` on the validation draws.
    pub val_loss: Option<f64>,
    /// Reduced upper loss on the test draws.
    pub test_loss_reduced: f64,
    pub wall_time: f64,
}

impl TrialMetrics {
    /// `(name, value)` for every metric the trial produced, in output order.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        let opt = [
            ("test_loss", self.test_loss),
            ("reference_loss", self.reference_loss),
            ("delta_y", self.delta_y),
            ("delta_x", self.delta_x),
            ("val_loss", self.val_loss),
        ];
        out.extend(opt.into_iter().filter_map(|(n, v)| v.map(|v| (n, v))));
        out.push(("test_loss_reduced", self.test_loss_reduced));
        out.push(("wall_time", self.wall_time));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    /// Loss the grid search minimizes: validation loss for hyper-cleaning,
    /// training loss of the tail average otherwise.
    pub selection_loss: f64,
    pub metrics: Option<TrialMetrics>,
    pub records: Vec<EpochRecord>,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

impl TrialOutcome {
    fn failed(trial: usize, seed: u64, error: String) -> Self {
        Self {
            trial,
            seed,
            selection_loss: f64::NAN,
            metrics: None,
            records: Vec::new(),
            error: Some(error),
            warnings: Vec::new(),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

fn mean_reduced_loss<P: CsboProblem + ?Sized>(
    red: &ReducedSbo<'_, P>,
    x: &DVector<f64>,
    w: &DMatrix<f64>,
    samples: &[JointSample],
) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += red.f_value(x, w, &red.context(s)?);
    }
    Ok(total / samples.len() as f64)
}

/// One seeded trial. With `evaluate` unset only the selection loss is
/// computed, skipping the exact lower-level solves.
pub fn run_trial(
    cfg: &ExperimentConfig,
    solver: &SolverSection,
    trial: usize,
    dataset: Option<&Dataset>,
    evaluate: bool,
) -> TrialOutcome {
    let seed = cfg.trial_seed(trial);
    match try_trial(cfg, solver, trial, seed, dataset, evaluate) {
        Ok(o) => o,
        Err(e) => TrialOutcome::failed(trial, seed, format!("{e:#}")),
    }
}

fn try_trial(
    cfg: &ExperimentConfig,
    solver: &SolverSection,
    trial: usize,
    seed: u64,
    dataset: Option<&Dataset>,
    evaluate: bool,
) -> Result<TrialOutcome> {
    let started = Instant::now();
    let instance = build_instance(cfg, seed, dataset)?;
    let problem = instance.problem();
    let data = trial_data(cfg, problem, seed)?;
    let map: FeatureMap = basis::build(cfg.basis.kind(), cfg.n_basis, problem.domain().clone())?;
    let red = ReducedSbo::new(problem, &map)?;

    let clock = InstantClock::start();
    let options = RunOptions {
        validation: Some(&data.validation),
        x0: None,
        clock: if cfg.record_timing { &clock } else { &NoClock },
        inverse: solver.inverse.into(),
    };
    let res = run_with(&red, &data.train, &solver.to_config(seed), options)?;
    let mut outcome = TrialOutcome {
        trial,
        seed,
        selection_loss: f64::NAN,
        metrics: None,
        records: res.records.clone(),
        error: res.failure.as_ref().map(|e| e.to_string()),
        warnings: res.warnings.clone(),
    };
    if res.failed() {
        return Ok(outcome);
    }

    let (x, w) = (&res.x_tail_avg, &res.w_tail_avg);
    let val_loss = mean_reduced_loss(&red, x, w, &data.validation)?;
    outcome.selection_loss = match cfg.problem {
        ProblemKind::Hyperclean => val_loss,
        _ => mean_reduced_loss(&red, x, w, &data.train)?,
    };
    if !evaluate {
        return Ok(outcome);
    }

    let mut m = TrialMetrics {
        val_loss: Some(val_loss),
        test_loss_reduced: mean_reduced_loss(&red, x, w, &data.test)?,
        ..TrialMetrics::default()
    };
    // Exact lower solves over the hyper-cleaning training set are too costly
    // per context; that instance reports reduced losses only.
    if cfg.problem != ProblemKind::Hyperclean {
        let tol = cfg.oracle_tol;
        m.test_loss = Some(upper_value(problem, x, &data.test, tol).context("test loss")?);
        let ystar = lower_solutions(problem, x, &data.test, tol)?;
        m.delta_y = Some(mean_residual(&map, w, &data.test, &ystar, 2)?);
        if let Some(xs) = problem.ground_truth_x() {
            m.delta_x = Some((x - &xs).norm_squared());
            m.reference_loss = Some(upper_value(problem, &xs, &data.test, tol).context("reference loss")?);
        }
    }
    if cfg.record_timing {
        m.wall_time = started.elapsed().as_secs_f64();
    }
    outcome.metrics = Some(m);
    Ok(outcome)
}

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Trials sorted by index.
    pub trials: Vec<TrialOutcome>,
}

impl ExperimentReport {
    pub fn n_succeeded(&self) -> usize {
        self.trials.iter().filter(|t| t.ok()).count()
    }

    pub fn complete(&self) -> bool {
        self.n_succeeded() == self.trials.len()
    }

    /// Values of one metric over the successful trials.
    pub fn metric(&self, name: &str) -> Vec<f64> {
        self.trials
            .iter()
            .filter_map(|t| t.metrics.as_ref())
            .filter_map(|m| m.named().into_iter().find(|(n, _)| *n == name).map(|(_, v)| v))
            .collect()
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    let pool = thread_pool(cfg.jobs)?;
    let mut trials: Vec<TrialOutcome> = pool.install(|| {
        (0..cfg.n_trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, &cfg.solver, t, dataset.as_ref(), true))
            .collect()
    });
    trials.sort_by_key(|t| t.trial);
    Ok(ExperimentReport {
        config: cfg.clone(),
        trials,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub alpha: f64,
    pub beta: f64,
    pub t_inner: usize,
    /// Mean selection loss over the trials; NaN when any trial failed.
    pub score: f64,
    pub failures: usize,
    pub diagnostics: Vec<String>,
}

impl GridCell {
    pub fn usable(&self) -> bool {
        self.failures == 0 && self.score.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    pub best: usize,
}

impl GridReport {
    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }

    pub fn best_solver(&self, base: &SolverSection) -> SolverSection {
        let c = self.best_cell();
        SolverSection {
            alpha: c.alpha,
            beta: c.beta,
            t_inner: c.t_inner,
            ..base.clone()
        }
    }
}

/// Evaluates every `(α, β, t_inner)` cell over the configured trials and
/// returns the lowest mean selection loss. Ties go to the smaller `α`, then
/// `β`, then `t_inner`; cells with a failed trial are excluded.
pub fn run_grid_search(cfg: &ExperimentConfig) -> Result<GridReport> {
    cfg.validate()?;
    let grid = cfg.grid.as_ref().context("config has no grid section")?;
    let dataset = load_dataset(cfg)?;
    let mut cells: Vec<SolverSection> = Vec::new();
    for &alpha in &grid.alpha {
        for &beta in &grid.beta {
            for &t_inner in &grid.t_inner {
                cells.push(SolverSection {
                    alpha,
                    beta,
                    t_inner,
                    ..cfg.solver.clone()
                });
            }
        }
    }
    let work: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.n_trials).map(move |t| (c, t)))
        .collect();
    let pool = thread_pool(cfg.jobs)?;
    let mut outcomes: Vec<(usize, TrialOutcome)> = pool.install(|| {
        work.par_iter()
            .map(|&(c, t)| (c, run_trial(cfg, &cells[c], t, dataset.as_ref(), false)))
            .collect()
    });
    outcomes.sort_by_key(|(c, o)| (*c, o.trial));

    let mut report = Vec::with_capacity(cells.len());
    for (c, s) in cells.iter().enumerate() {
        let mine: Vec<&TrialOutcome> = outcomes.iter().filter(|(k, _)| *k == c).map(|(_, o)| o).collect();
        let failures = mine.iter().filter(|o| !o.ok() || !o.selection_loss.is_finite()).count();
        let diagnostics = mine
            .iter()
            .filter_map(|o| o.error.as_ref().map(|e| format!("trial {}: {e}", o.trial)))
            .collect();
        let score = if failures == 0 {
            mine.iter().map(|o| o.selection_loss).sum::<f64>() / mine.len() as f64
        } else {
            f64::NAN
        };
        report.push(GridCell {
            alpha: s.alpha,
            beta: s.beta,
            t_inner: s.t_inner,
            score,
            failures,
            diagnostics,
        });
    }

    match select_best(&report) {
        Some(best) => Ok(GridReport { cells: report, best }),
        None => {
            let lines: Vec<String> = report
                .iter()
                .map(|c| format!("α={} β={} T={}: {}", c.alpha, c.beta, c.t_inner, c.diagnostics.join("; ")))
                .collect();
            bail!("every grid cell diverged:\n{}", lines.join("\n"))
        }
    }
}

/// Index of the usable cell with the lowest score, ties broken by `α`,
/// then `β`, then `t_inner`.
pub fn select_best(cells: &[GridCell]) -> Option<usize> {
    let key = |c: &GridCell| (c.score, c.alpha, c.beta, c.t_inner as f64);
    cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.usable())
        .min_by(|(_, a), (_, b)| key(a).partial_cmp(&key(b)).expect("finite scores"))
        .map(|(i, _)| i)
}

/// Normal-theory mean and 95% interval `mean ± 1.96 s/√n`; the interval is
/// NaN for a single value.
pub fn mean_ci95(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let half = 1.96 * var.sqrt() / n.sqrt();
    (mean, mean - half, mean + half)
}
