//! Double-loop stochastic hypergradient solver for the reduced problem.
//!
//! Each outer step runs `t_inner` SGD steps on `W` (warm-started), estimates
//! the hypergradient with a truncated Neumann series for the inverse
//! reduced Hessian, and takes a descent step on `x`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::basis::{build_indicator, FeatureMap};
use crate::error::{Error, Result};
use crate::linalg::{spd_solve, unvec_row_major, vec_row_major};
use crate::problem::{CsboProblem, JointSample};
use crate::reduction::{Context, ReducedSbo, DENSE_LIMIT};
use crate::rng::{self, StreamRng};

/// `‖W‖` or `‖x‖` beyond which a run is declared diverged.
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Outer step size.
    pub alpha: f64,
    /// Inner step size.
    pub beta: f64,
    pub t_inner: usize,
    pub k_neumann: usize,
    pub s_neumann: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Share of final epochs averaged into the reported solution.
    pub tail_fraction: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            t_inner: 10,
            k_neumann: 10,
            s_neumann: 1e-2,
            batch: 32,
            epochs: 50,
            seed: 0,
            tail_fraction: 0.1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and non-negative");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) || !(self.s_neumann > 0.0 && self.s_neumann.is_finite()) {
            return bad("beta and s_neumann must be positive");
        }
        if self.t_inner == 0 || self.k_neumann == 0 || self.batch == 0 || self.epochs == 0 {
            return bad("t_inner, k_neumann, batch and epochs must be at least 1");
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return bad("tail_fraction must lie in (0, 1]");
        }
        Ok(())
    }

    /// Number of trailing epochs averaged, `⌈tail_fraction · epochs⌉`.
    pub fn tail_len(&self) -> usize {
        (libm::ceil(self.tail_fraction * self.epochs as f64) as usize).clamp(1, self.epochs)
    }
}

/// How the inverse reduced Hessian is applied inside the hypergradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InverseMode {
    /// Truncated Neumann series over `k_neumann` fresh draws.
    #[default]
    Neumann,
    /// Dense solve with the reduced Hessian averaged over the draws.
    Exact,
}

/// Wall-clock source; the core crate has no clock of its own.
pub trait Clock: Sync {
    /// Seconds since an arbitrary fixed origin.
    fn now(&self) -> f64;
}

/// Reports zero elapsed time.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub upper_loss_train: f64,
    pub upper_loss_val: Option<f64>,
    /// Mean hypergradient norm over the epoch's outer steps.
    pub grad_norm: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub x_final: DVector<f64>,
    pub w_final: DMatrix<f64>,
    pub x_tail_avg: DVector<f64>,
    pub w_tail_avg: DMatrix<f64>,
    pub records: Vec<EpochRecord>,
    pub seed: u64,
    /// Set when the run stopped early; fields hold the last good state.
    pub failure: Option<Error>,
    pub warnings: Vec<String>,
}

impl RunResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Optional inputs to [`run_with`].
pub struct RunOptions<'a> {
    pub validation: Option<&'a [JointSample]>,
    /// Starting point; the problem's initial `x` otherwise.
    pub x0: Option<DVector<f64>>,
    pub clock: &'a dyn Clock,
    pub inverse: InverseMode,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        Self {
            validation: None,
            x0: None,
            clock: &NoClock,
            inverse: InverseMode::Neumann,
        }
    }
}

fn mean_of<T>(items: &[T], mut f: impl FnMut(&T) -> DMatrix<f64>) -> DMatrix<f64> {
    let mut it = items.iter();
    let mut acc = f(it.next().expect("non-empty"));
    for c in it {
        acc += f(c);
    }
    acc / items.len() as f64
}

fn mean_vec<T>(items: &[T], mut f: impl FnMut(&T) -> DVector<f64>) -> DVector<f64> {
    let mut it = items.iter();
    let mut acc = f(it.next().expect("non-empty"));
    for c in it {
        acc += f(c);
    }
    acc / items.len() as f64
}

fn draw<'c, 's>(pool: &'c [Context<'s>], k: usize, rng: &mut StreamRng) -> Vec<&'c Context<'s>> {
    (0..k).map(|_| &pool[rng.random_range(0..pool.len())]).collect()
}

/// `t_inner` steps of `W ← W − β · mean ∇_W g_Φ` over minibatches of size
/// `min(batch, |pool|)` drawn with replacement from `pool`. A pool no larger
/// than the batch is used whole at every step.
pub fn inner_loop<P: CsboProblem + ?Sized>(
    reduced: &ReducedSbo<'_, P>,
    x: &DVector<f64>,
    w: &mut DMatrix<f64>,
    pool: &[Context<'_>],
    config: &SolverConfig,
    rng: &mut StreamRng,
) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::EmptySamples("inner-loop samples"));
    }
    for step in 0..config.t_inner {
        let grad = if pool.len() <= config.batch {
            mean_of(pool, |c| reduced.grad_gphi_w(x, w, c))
        } else {
            let picks = draw(pool, config.batch, rng);
            mean_of(&picks, |c| reduced.grad_gphi_w(x, w, c))
        };
        *w -= grad * config.beta;
        let norm = w.norm();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Diverged {
                stage: "inner loop (reduce beta)",
                step,
                step_size: config.beta,
                norm,
            });
        }
    }
    Ok(())
}

/// `s · Σ_{j=0}^{K} Π_{k=1}^{j} (I − s H_k) v` with `H_k` the reduced
/// Hessian at draw `k`, one draw per factor.
pub fn neumann_inverse_apply<P: CsboProblem + ?Sized>(
    reduced: &ReducedSbo<'_, P>,
    x: &DVector<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
    draws: &[&Context<'_>],
    s: f64,
) -> Result<DMatrix<f64>> {
    let mut term = v.clone();
    let mut acc = v.clone();
    for c in draws {
        let h = reduced.hess_gphi_ww_apply(x, w, c, &term);
        term -= h * s;
        acc += &term;
    }
    if !crate::linalg::all_finite(acc.iter()) {
        return Err(Error::NonFinite("Neumann series"));
    }
    Ok(acc * s)
}

/// Batch hypergradient
/// `mean ∇_x f_Φ − mean ∇²_xW g_Φ [q]`, `q ≈ (∇²_WW g_Φ)⁻¹ mean ∇_W f_Φ`,
/// with `q` from the Neumann series over `draws` or a dense solve of the
/// Hessian averaged over `draws`.
pub fn hypergradient<P: CsboProblem + ?Sized>(
    reduced: &ReducedSbo<'_, P>,
    x: &DVector<f64>,
    w: &DMatrix<f64>,
    batch: &[&Context<'_>],
    draws: &[&Context<'_>],
    s: f64,
    mode: InverseMode,
) -> Result<DVector<f64>> {
    if batch.is_empty() || draws.is_empty() {
        return Err(Error::EmptySamples("hypergradient batch"));
    }
    let v = mean_of(batch, |c| reduced.grad_fphi_w(x, w, c));
    let q = match mode {
        InverseMode::Neumann => neumann_inverse_apply(reduced, x, w, &v, draws, s)?,
        InverseMode::Exact => {
            let (r, n) = reduced.w_shape();
            if r * n > DENSE_LIMIT {
                return Err(Error::TooLarge {
                    size: r * n,
                    limit: DENSE_LIMIT,
                });
            }
            let mut h = DMatrix::zeros(r * n, r * n);
            for c in draws {
                h += reduced.hess_gphi_ww_dense(x, w, c)?;
            }
            h /= draws.len() as f64;
            unvec_row_major(&spd_solve(&h, &vec_row_major(&v))?, r, n)
        }
    };
    let direct = mean_vec(batch, |c| reduced.grad_fphi_x(x, w, c));
    let correction = mean_vec(batch, |c| reduced.hess_gphi_xw_apply(x, w, c, &q));
    let h = direct - correction;
    if !crate::linalg::all_finite(h.iter()) {
        return Err(Error::NonFinite("hypergradient"));
    }
    Ok(h)
}

/// Warning text when `s · λ_max` of the reduced Hessian may reach one, using
/// the problem's curvature bound and the largest `‖Φ‖²` in `pool`.
pub fn neumann_stability_warning<P: CsboProblem + ?Sized>(
    reduced: &ReducedSbo<'_, P>,
    pool: &[Context<'_>],
    s: f64,
) -> Option<String> {
    let bound = reduced.problem().lower_hessian_bound()?;
    let phi_sq = pool.iter().map(|c| c.phi.norm_squared()).fold(0.0, f64::max);
    let lmax = bound * phi_sq;
    (s * lmax >= 1.0).then(|| {
        format!("Neumann scaling s = {s:e} times reduced curvature bound {lmax:.4e} is at least 1; the series may not contract")
    })
}

fn mean_loss<P: CsboProblem + ?Sized>(
    reduced: &ReducedSbo<'_, P>,
    x: &DVector<f64>,
    w: &DMatrix<f64>,
    set: &[Context<'_>],
) -> f64 {
    set.iter().map(|c| reduced.f_value(x, w, c)).sum::<f64>() / set.len() as f64
}

pub fn run<P: CsboProblem + ?Sized>(
    reduced: &ReducedSbo<'_, P>,
    train: &[JointSample],
    config: &SolverConfig,
) -> Result<RunResult> {
    run_with(reduced, train, config, RunOptions::default())
}

/// Full optimization run. Configuration and data errors are returned as
/// `Err`; failures during optimization yield a partial result with
/// `failure` set.
pub fn run_with<P: CsboProblem + ?Sized>(
    reduced: &ReducedSbo<'_, P>,
    train: &[JointSample],
    config: &SolverConfig,
    options: RunOptions<'_>,
) -> Result<RunResult> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySamples("training set"));
    }
    let problem = reduced.problem();
    let pool = reduced.contexts(train)?;
    let val = match options.validation {
        Some(v) if !v.is_empty() => Some(reduced.contexts(v)?),
        _ => None,
    };
    let mut x = options.x0.unwrap_or_else(|| problem.initial_x());
    if x.len() != problem.dims().d_x {
        return Err(Error::DimensionMismatch {
            what: "starting x",
            expected: problem.dims().d_x,
            got: x.len(),
        });
    }
    problem.project_x(&mut x);
    let mut w = reduced.zero_w();
    let mut warnings = Vec::new();
    if options.inverse == InverseMode::Neumann {
        warnings.extend(neumann_stability_warning(reduced, &pool, config.s_neumann));
    }

    let mut rng = rng::stream(config.seed, rng::streams::SOLVER);
    let start = options.clock.now();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut snapshots: Vec<(DVector<f64>, DMatrix<f64>)> = Vec::new();
    let tail = config.tail_len();
    let mut failure = None;
    let mut step = 0usize;

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut norm_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch) {
            if let Err(e) = inner_loop(reduced, &x, &mut w, &pool, config, &mut rng) {
                failure = Some(e);
                break 'epochs;
            }
            let batch: Vec<&Context<'_>> = chunk.iter().map(|&i| &pool[i]).collect();
            let draws = draw(&pool, config.k_neumann, &mut rng);
            let h = match hypergradient(reduced, &x, &w, &batch, &draws, config.s_neumann, options.inverse) {
                Ok(h) => h,
                Err(e) => {
                    failure = Some(e);
                    break 'epochs;
                }
            };
            x -= &h * config.alpha;
            problem.project_x(&mut x);
            let xn = x.norm();
            if !(xn <= DIVERGENCE_NORM) {
                failure = Some(Error::Diverged {
                    stage: "outer loop (reduce alpha)",
                    step,
                    step_size: config.alpha,
                    norm: xn,
                });
                break 'epochs;
            }
            norm_sum += h.norm();
            steps += 1;
            step += 1;
        }
        records.push(EpochRecord {
            epoch,
            upper_loss_train: mean_loss(reduced, &x, &w, &pool),
            upper_loss_val: val.as_ref().map(|v| mean_loss(reduced, &x, &w, v)),
            grad_norm: norm_sum / steps as f64,
            wall_time: options.clock.now() - start,
        });
        if epoch + tail >= config.epochs {
            snapshots.push((x.clone(), w.clone()));
        }
    }

    let (x_tail_avg, w_tail_avg) = if snapshots.is_empty() {
        (x.clone(), w.clone())
    } else {
        let k = snapshots.len() as f64;
        let xs = snapshots.iter().fold(DVector::zeros(x.len()), |a, s| a + &s.0) / k;
        let ws = snapshots.iter().fold(reduced.zero_w(), |a, s| a + &s.1) / k;
        (xs, ws)
    };
    Ok(RunResult {
        x_final: x,
        w_final: w,
        x_tail_avg,
        w_tail_avg,
        records,
        seed: config.seed,
        failure,
        warnings,
    })
}

/// The partition baseline: one independent `y` per equal-width cell of a
/// scalar context, expressed as the reduced problem over the indicator map.
pub fn run_partition_baseline<P: CsboProblem + ?Sized>(
    problem: &P,
    n_cells: usize,
    train: &[JointSample],
    config: &SolverConfig,
    options: RunOptions<'_>,
) -> Result<(FeatureMap, RunResult)> {
    if problem.dims().d_xi != 1 {
        return Err(Error::InvalidArgument(
            "the partition baseline needs a scalar context".into(),
        ));
    }
    let map = build_indicator(n_cells, problem.domain().clone())?;
    let reduced = ReducedSbo::new(problem, &map)?;
    let result = run_with(&reduced, train, config, options)?;
    Ok((map, result))
}
