//! Experiment configuration.
//!
//! Configs are flat text files with one `key = value` pair per line and
//! dot-separated nesting (`solver.alpha = 0.1`), read as TOML. The resolved
//! configuration is echoed as JSON, which [`load`] also accepts.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use csbo_core::basis::BasisKind;
use csbo_core::problem::{HypercleanParams, QuadraticParams, TrafficParams};
use csbo_core::solver::{InverseMode, SolverConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Quadratic,
    Traffic,
    Hyperclean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Chebyshev,
    Fourier,
    Monomial,
    Indicator,
}

impl Basis {
    pub fn kind(self) -> BasisKind {
        match self {
            Basis::Chebyshev => BasisKind::Chebyshev,
            Basis::Fourier => BasisKind::Fourier,
            Basis::Monomial => BasisKind::Monomial,
            Basis::Indicator => BasisKind::Indicator,
        }
    }

    pub fn name(self) -> &'static str {
        self.kind().name()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Inverse {
    #[default]
    Neumann,
    Exact,
}

impl From<Inverse> for InverseMode {
    fn from(v: Inverse) -> Self {
        match v {
            Inverse::Neumann => InverseMode::Neumann,
            Inverse::Exact => InverseMode::Exact,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    #[default]
    Csv,
    /// Raw little-endian `f64`, row-major, `data_columns` values per row.
    F64le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub alpha: f64,
    pub beta: f64,
    pub t_inner: usize,
    pub k_neumann: usize,
    pub s_neumann: f64,
    pub batch: usize,
    pub epochs: usize,
    pub tail_fraction: f64,
    pub inverse: Inverse,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            alpha: d.alpha,
            beta: d.beta,
            t_inner: d.t_inner,
            k_neumann: d.k_neumann,
            s_neumann: d.s_neumann,
            batch: d.batch,
            epochs: d.epochs,
            tail_fraction: d.tail_fraction,
            inverse: Inverse::Neumann,
        }
    }
}

impl SolverSection {
    pub fn to_config(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            alpha: self.alpha,
            beta: self.beta,
            t_inner: self.t_inner,
            k_neumann: self.k_neumann,
            s_neumann: self.s_neumann,
            batch: self.batch,
            epochs: self.epochs,
            seed,
            tail_fraction: self.tail_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub t_inner: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticSection {
    pub d_x: usize,
    pub d_y: usize,
    pub omega: f64,
    pub rho_m: f64,
    pub sigma: f64,
    pub lambda_x: f64,
}

impl Default for QuadraticSection {
    fn default() -> Self {
        let p = QuadraticParams::default();
        Self {
            d_x: 3,
            d_y: 3,
            omega: p.omega,
            rho_m: p.rho_m,
            sigma: p.sigma,
            lambda_x: p.lambda_x,
        }
    }
}

impl QuadraticSection {
    pub fn params(&self) -> QuadraticParams {
        QuadraticParams {
            omega: self.omega,
            rho_m: self.rho_m,
            sigma: self.sigma,
            lambda_x: self.lambda_x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    pub sigma0: f64,
    pub solve_tol: f64,
    pub lambda_demand: f64,
    pub lambda_plus: f64,
}

impl Default for TrafficSection {
    fn default() -> Self {
        let p = TrafficParams::default();
        Self {
            sigma0: p.sigma0,
            solve_tol: p.solve_tol,
            lambda_demand: p.lambda_demand,
            lambda_plus: p.lambda_plus,
        }
    }
}

impl TrafficSection {
    pub fn params(&self) -> TrafficParams {
        TrafficParams {
            sigma0: self.sigma0,
            solve_tol: self.solve_tol,
            lambda_demand: self.lambda_demand,
            lambda_plus: self.lambda_plus,
            ..TrafficParams::default()
        }
    }
}

/// Hyper-cleaning instance. The number of training examples is the
/// experiment's `n_train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypercleanSection {
    pub n_val: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub p_corrupt: f64,
    pub lambda: f64,
    pub separation: f64,
    pub xi_low: f64,
    pub xi_high: f64,
}

impl Default for HypercleanSection {
    fn default() -> Self {
        let p = HypercleanParams::default();
        Self {
            n_val: p.n_val,
            n_features: p.n_features,
            n_classes: p.n_classes,
            p_corrupt: p.p_corrupt,
            lambda: p.lambda,
            separation: p.separation,
            xi_low: p.xi_low,
            xi_high: p.xi_high,
        }
    }
}

impl HypercleanSection {
    pub fn params(&self, n_train: usize) -> HypercleanParams {
        HypercleanParams {
            n_train,
            n_val: self.n_val,
            n_features: self.n_features,
            n_classes: self.n_classes,
            p_corrupt: self.p_corrupt,
            lambda: self.lambda,
            separation: self.separation,
            xi_low: self.xi_low,
            xi_high: self.xi_high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub basis: Basis,
    pub n_basis: usize,
    pub n_trials: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Master seed; trial `i` uses `seed + i`.
    pub seed: u64,
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
    pub output_path: String,
    pub data_path: Option<String>,
    pub data_format: DataFormat,
    pub data_columns: Option<usize>,
    /// Moving-average window of the smoothed loss curves; `max(1, epochs/20)`
    /// when absent.
    pub smoothing_window: Option<usize>,
    /// Wall-clock columns are written as 0 unless set, keeping outputs
    /// byte-reproducible.
    pub record_timing: bool,
    /// Tolerance of the exact lower-level solves used for metrics.
    pub oracle_tol: f64,
    pub solver: SolverSection,
    pub grid: Option<GridSection>,
    pub quadratic: QuadraticSection,
    pub traffic: TrafficSection,
    pub hyperclean: HypercleanSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Quadratic,
            basis: Basis::Chebyshev,
            n_basis: 5,
            n_trials: 1,
            n_train: 1000,
            n_test: 1000,
            seed: 0,
            jobs: 1,
            output_path: "results".into(),
            data_path: None,
            data_format: DataFormat::Csv,
            data_columns: None,
            smoothing_window: None,
            record_timing: false,
            oracle_tol: 1e-10,
            solver: SolverSection::default(),
            grid: None,
            quadratic: QuadraticSection::default(),
            traffic: TrafficSection::default(),
            hyperclean: HypercleanSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_trials >= 1, "n_trials must be at least 1");
        ensure!(self.n_basis >= 1, "n_basis must be at least 1");
        ensure!(self.n_train >= 1 && self.n_test >= 1, "n_train and n_test must be positive");
        ensure!(self.oracle_tol > 0.0, "oracle_tol must be positive");
        if let Some(g) = &self.grid {
            ensure!(
                !g.alpha.is_empty() && !g.beta.is_empty() && !g.t_inner.is_empty(),
                "grid lists must be non-empty"
            );
        }
        if self.data_path.is_some() && self.problem != ProblemKind::Hyperclean {
            bail!("data_path is only used by the hyperclean problem");
        }
        if self.data_format == DataFormat::F64le && self.data_path.is_some() && self.data_columns.is_none() {
            bail!("data_format = \"f64le\" needs data_columns");
        }
        self.solver
            .to_config(self.seed)
            .validate()
            .map_err(|e| anyhow::anyhow!("solver section: {e}"))?;
        Ok(())
    }

    pub fn smoothing_window(&self) -> usize {
        self.smoothing_window.unwrap_or(self.solver.epochs / 20).max(1)
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("parsing JSON config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Reads a config file; `.json` files are read as a config echo.
pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        ExperimentConfig::from_json(&text)
    } else {
        ExperimentConfig::from_text(&text)
    }
}
