//! Brute-force references for validating the estimators.
//!
//! Lower-level problems are solved with Newton's method on the conditional
//! objective `Σ_w w · g(x, y, ξ, η_w)` over the weights returned by
//! [`CsboProblem::conditional_eta`], and inverse Hessians are applied by
//! dense symmetric solves.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::basis::FeatureMap;
use crate::error::{Error, Result};
use crate::linalg::{minimize_strongly_convex, spd_solve, sym_eig_extremes, unvec_row_major, vec_row_major};
use crate::problem::{CsboProblem, JointSample, QuadraticProblem, RegularityConstants};
use crate::reduction::{Context, ReducedSbo, DENSE_LIMIT};

/// Iteration cap of the exact lower-level solvers.
pub const MAX_ITER: usize = 1_000_000;

/// Central finite-difference step used by the checks.
pub const FD_STEP: f64 = 1e-5;

/// `y⋆(x, ξ)`: closed form when the problem has one, Newton otherwise.
pub fn solve_lower_exact<P: CsboProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    xi: &[f64],
    tol: f64,
) -> Result<DVector<f64>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if let Some(y) = problem.exact_lower_solution(x, xi) {
        return Ok(y);
    }
    let cond = problem.conditional_eta(xi);
    let d_y = problem.dims().d_y;
    minimize_strongly_convex(
        |y| cond.iter().map(|(w, e)| w * problem.g_value(x, y, xi, e)).sum(),
        |y| cond.iter().fold(DVector::zeros(d_y), |a, (w, e)| a + problem.grad_g_y(x, y, xi, e) * *w),
        |y| cond.iter().fold(DMatrix::zeros(d_y, d_y), |a, (w, e)| a + problem.hess_g_yy(x, y, xi, e) * *w),
        DVector::zeros(d_y),
        tol,
        MAX_ITER,
    )
}

/// `y⋆(x, ξ_i)` for every sample.
pub fn lower_solutions<P: CsboProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    samples: &[JointSample],
    tol: f64,
) -> Result<Vec<DVector<f64>>> {
    samples.iter().map(|s| solve_lower_exact(problem, x, &s.xi, tol)).collect()
}

/// Empirical `F(x) = mean f(x, y⋆(x, ξ_i), ξ_i, η_i)`.
pub fn upper_value<P: CsboProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    samples: &[JointSample],
    tol: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples("evaluation samples"));
    }
    let mut total = 0.0;
    for s in samples {
        let y = solve_lower_exact(problem, x, &s.xi, tol)?;
        total += problem.f_value(x, &y, &s.xi, &s.eta);
    }
    Ok(total / samples.len() as f64)
}

/// Empirical `∇F(x)` by the implicit-function formula
/// `∇_x f − ∇₁₂G (∇²_yy G)⁻¹ ∇_y f` with `G` the conditional lower objective.
pub fn exact_hypergradient<P: CsboProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    samples: &[JointSample],
    tol: f64,
) -> Result<DVector<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples("evaluation samples"));
    }
    let d = problem.dims();
    let mut acc = DVector::zeros(d.d_x);
    for s in samples {
        let y = solve_lower_exact(problem, x, &s.xi, tol)?;
        let cond = problem.conditional_eta(&s.xi);
        let h = cond
            .iter()
            .fold(DMatrix::zeros(d.d_y, d.d_y), |a, (w, e)| a + problem.hess_g_yy(x, &y, &s.xi, e) * *w);
        let q = spd_solve(&h, &problem.grad_f_y(x, &y, &s.xi, &s.eta))?;
        let corr = cond
            .iter()
            .fold(DVector::zeros(d.d_x), |a, (w, e)| a + problem.hess_g_xy_apply(x, &y, &s.xi, e, &q) * *w);
        acc += problem.grad_f_x(x, &y, &s.xi, &s.eta) - corr;
    }
    Ok(acc / samples.len() as f64)
}

/// Central differences `(f(p + h e_i) − f(p − h e_i)) / 2h`.
pub fn finite_diff_gradient(
    f: impl Fn(&DVector<f64>) -> f64,
    point: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let mut out = DVector::zeros(point.len());
    let mut p = point.clone();
    for i in 0..point.len() {
        p[i] = point[i] + h;
        let up = f(&p);
        p[i] = point[i] - h;
        let down = f(&p);
        p[i] = point[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("finite-difference evaluation"));
        }
        out[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

fn check_dense<P: CsboProblem + ?Sized>(reduced: &ReducedSbo<'_, P>) -> Result<(usize, usize)> {
    let (r, n) = reduced.w_shape();
    if r * n > DENSE_LIMIT {
        return Err(Error::TooLarge {
            size: r * n,
            limit: DENSE_LIMIT,
        });
    }
    Ok((r, n))
}

/// Empirical second moment `mean Φ(ξ_i) Φ(ξ_i)ᵀ`.
pub fn feature_gram(map: &FeatureMap, samples: &[JointSample]) -> Result<DMatrix<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples("feature samples"));
    }
    let n = map.len();
    let mut g = DMatrix::zeros(n, n);
    for s in samples {
        let phi = map.evaluate(&s.xi)?;
        g += &phi * phi.transpose();
    }
    Ok(g / samples.len() as f64)
}

/// `W⋆(x)` minimizing `mean_i G(x, W Φ(ξ_i), ξ_i)` by Newton's method with
/// dense reduced Hessians.
pub fn solve_reduced_lower_exact<P: CsboProblem + ?Sized>(
    reduced: &ReducedSbo<'_, P>,
    x: &DVector<f64>,
    samples: &[JointSample],
    tol: f64,
) -> Result<DMatrix<f64>> {
    let (r, n) = check_dense(reduced)?;
    let (lmin, _) = sym_eig_extremes(&feature_gram(reduced.map(), samples)?);
    if !(lmin > 1e-12) {
        return Err(Error::IllConditioned { lambda_min: lmin });
    }
    let problem = reduced.problem();
    let ctx = reduced.contexts(samples)?;
    let cond: Vec<_> = samples.iter().map(|s| problem.conditional_eta(&s.xi)).collect();
    let m = samples.len() as f64;
    let value = |v: &DVector<f64>| {
        let w = unvec_row_major(v, r, n);
        ctx.iter()
            .zip(&cond)
            .map(|(c, ce)| {
                let y = &w * &c.phi;
                ce.iter().map(|(wt, e)| wt * problem.g_value(x, &y, c.xi, e)).sum::<f64>()
            })
            .sum::<f64>()
            / m
    };
    let grad = |v: &DVector<f64>| {
        let w = unvec_row_major(v, r, n);
        let mut g = DMatrix::zeros(r, n);
        for (c, ce) in ctx.iter().zip(&cond) {
            let y = &w * &c.phi;
            for (wt, e) in ce {
                g += problem.grad_g_y(x, &y, c.xi, e) * c.phi.transpose() * *wt;
            }
        }
        vec_row_major(&(g / m))
    };
    let hess = |v: &DVector<f64>| {
        let w = unvec_row_major(v, r, n);
        reduced_hessian(reduced, x, &w, &ctx, &cond)
    };
    let v = minimize_strongly_convex(value, grad, hess, DVector::zeros(r * n), tol, MAX_ITER)?;
    Ok(unvec_row_major(&v, r, n))
}

fn reduced_hessian<P: CsboProblem + ?Sized>(
    reduced: &ReducedSbo<'_, P>,
    x: &DVector<f64>,
    w: &DMatrix<f64>,
    ctx: &[Context<'_>],
    cond: &[Vec<(f64, Vec<f64>)>],
) -> DMatrix<f64> {
    let problem = reduced.problem();
    let d_y = problem.dims().d_y;
    let mut acc = DMatrix::zeros(d_y * reduced.n_features(), d_y * reduced.n_features());
    for (c, ce) in ctx.iter().zip(cond) {
        let y = w * &c.phi;
        let h = ce
            .iter()
            .fold(DMatrix::zeros(d_y, d_y), |a, (wt, e)| a + problem.hess_g_yy(x, &y, c.xi, e) * *wt);
        acc += h.kronecker(&(&c.phi * c.phi.transpose()));
    }
    acc / ctx.len() as f64
}

/// Reduced objective `F_Φ(x)` and hypergradient `∇F_Φ(x)` at the exact
/// reduced lower-level solution.
pub fn exact_reduced_hypergradient<P: CsboProblem + ?Sized>(
    reduced: &ReducedSbo<'_, P>,
    x: &DVector<f64>,
    samples: &[JointSample],
    tol: f64,
) -> Result<ReducedGradient> {
    let (r, n) = check_dense(reduced)?;
    let w = solve_reduced_lower_exact(reduced, x, samples, tol)?;
    let problem = reduced.problem();
    let ctx = reduced.contexts(samples)?;
    let cond: Vec<_> = samples.iter().map(|s| problem.conditional_eta(&s.xi)).collect();
    let m = samples.len() as f64;
    let h = reduced_hessian(reduced, x, &w, &ctx, &cond);
    let v = ctx
        .iter()
        .fold(DMatrix::zeros(r, n), |a, c| a + reduced.grad_fphi_w(x, &w, c))
        / m;
    let q = unvec_row_major(&spd_solve(&h, &vec_row_major(&v))?, r, n);
    let mut grad = DVector::zeros(problem.dims().d_x);
    let mut value = 0.0;
    for (c, ce) in ctx.iter().zip(&cond) {
        grad += reduced.grad_fphi_x(x, &w, c);
        value += reduced.f_value(x, &w, c);
        let y = &w * &c.phi;
        let dir = &q * &c.phi;
        for (wt, e) in ce {
            grad -= problem.hess_g_xy_apply(x, &y, c.xi, e, &dir) * *wt;
        }
    }
    Ok(ReducedGradient {
        w,
        value: value / m,
        gradient: grad / m,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedGradient {
    /// `W⋆(x)`.
    pub w: DMatrix<f64>,
    /// `F_Φ(x)`.
    pub value: f64,
    /// `∇F_Φ(x)`.
    pub gradient: DVector<f64>,
}

/// Least-squares projection `W_ls = Y⋆ Φᵀ (Φ Φᵀ)⁻¹` of target outputs onto
/// the span of the features.
pub fn least_squares_w(
    map: &FeatureMap,
    samples: &[JointSample],
    targets: &[DVector<f64>],
) -> Result<DMatrix<f64>> {
    if samples.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            what: "least-squares targets",
            expected: samples.len(),
            got: targets.len(),
        });
    }
    let gram = feature_gram(map, samples)?;
    let (lmin, _) = sym_eig_extremes(&gram);
    if !(lmin > 1e-12) {
        return Err(Error::IllConditioned { lambda_min: lmin });
    }
    let d_y = targets.first().map_or(0, |t| t.len());
    let mut cross = DMatrix::zeros(d_y, map.len());
    for (s, t) in samples.iter().zip(targets) {
        cross += t * map.evaluate(&s.xi)?.transpose();
    }
    cross /= samples.len() as f64;
    let chol = gram.cholesky().ok_or(Error::IllConditioned { lambda_min: lmin })?;
    // W Σ = C  ⇔  Σ Wᵀ = Cᵀ
    Ok(chol.solve(&cross.transpose()).transpose())
}

/// `mean ‖W Φ(ξ_i) − t_i‖^power` for `power` 1 or 2.
pub fn mean_residual(
    map: &FeatureMap,
    w: &DMatrix<f64>,
    samples: &[JointSample],
    targets: &[DVector<f64>],
    power: i32,
) -> Result<f64> {
    if samples.is_empty() || samples.len() != targets.len() {
        return Err(Error::EmptySamples("residual samples"));
    }
    let mut total = 0.0;
    for (s, t) in samples.iter().zip(targets) {
        let r = (w * map.evaluate(&s.xi)? - t).norm();
        total += if power == 1 { r } else { r * r };
    }
    Ok(total / samples.len() as f64)
}

/// Closed-form reduced solution of the quadratic instance,
/// `W⋆ = Q⁻¹ mean((A x + b(ξ_i) + m(ξ_i)) Φ_iᵀ) Σ̂⁻¹`.
pub fn quadratic_reduced_solution(
    problem: &QuadraticProblem,
    map: &FeatureMap,
    x: &DVector<f64>,
    samples: &[JointSample],
) -> Result<DMatrix<f64>> {
    let targets: Vec<DVector<f64>> = samples
        .iter()
        .map(|s| problem.a() * x + problem.forcing(&s.xi) + problem.noise_mean(&s.xi))
        .collect();
    Ok(problem.q_inv() * least_squares_w(map, samples, &targets)?)
}

/// Closed-form `∇F_Φ(x) = λ_x x + Aᵀ Q⁻¹ G Σ̂⁻¹ Φ̄` of the quadratic instance,
/// with `G = mean (W⋆ Φ_i − η_i) Φ_iᵀ`.
pub fn quadratic_reduced_gradient(
    problem: &QuadraticProblem,
    map: &FeatureMap,
    x: &DVector<f64>,
    samples: &[JointSample],
) -> Result<DVector<f64>> {
    let w = quadratic_reduced_solution(problem, map, x, samples)?;
    let m = samples.len() as f64;
    let mut g = DMatrix::zeros(w.nrows(), w.ncols());
    let mut phi_bar = DVector::zeros(map.len());
    for s in samples {
        let phi = map.evaluate(&s.xi)?;
        g += (&w * &phi - DVector::from_column_slice(&s.eta)) * phi.transpose();
        phi_bar += phi;
    }
    g /= m;
    phi_bar /= m;
    let sigma_inv_phi = spd_solve(&feature_gram(map, samples)?, &phi_bar)?;
    Ok(x * problem.params().lambda_x + problem.a().transpose() * problem.q_inv() * g * sigma_inv_phi)
}

/// Closed-form `∇F(x) = λ_x x + mean Aᵀ Q⁻¹ (y⋆_i − η_i)` of the quadratic
/// instance.
pub fn quadratic_gradient(
    problem: &QuadraticProblem,
    x: &DVector<f64>,
    samples: &[JointSample],
) -> Result<DVector<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples("evaluation samples"));
    }
    let mut acc = DVector::zeros(problem.a().nrows());
    for s in samples {
        let y = problem
            .exact_lower_solution(x, &s.xi)
            .ok_or(Error::Infeasible("quadratic closed form".into()))?;
        acc += y - DVector::from_column_slice(&s.eta);
    }
    acc /= samples.len() as f64;
    Ok(x * problem.params().lambda_x + problem.a().transpose() * problem.q_inv() * acc)
}

/// A measured inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }

    /// `rhs − lhs`.
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// `‖∇F(x) − ∇F_Φ(x)‖ ≤ K · mean ‖W⋆(x) Φ(ξ_i) − y⋆(x, ξ_i)‖`.
pub fn hypergradient_gap_check<P: CsboProblem + ?Sized>(
    reduced: &ReducedSbo<'_, P>,
    x: &DVector<f64>,
    samples: &[JointSample],
    constants: &RegularityConstants,
    tol: f64,
) -> Result<BoundCheck> {
    let problem = reduced.problem();
    let full = exact_hypergradient(problem, x, samples, tol)?;
    let red = exact_reduced_hypergradient(reduced, x, samples, tol)?;
    let ystar = lower_solutions(problem, x, samples, tol)?;
    let resid = mean_residual(reduced.map(), &red.w, samples, &ystar, 1)?;
    Ok(BoundCheck {
        lhs: (full - red.gradient).norm(),
        rhs: constants.k * resid,
    })
}

/// `mean ‖W⋆Φ − y⋆‖² ≤ (2 L_g1 / μ) · mean ‖W_ls Φ − y⋆‖²`.
pub fn reduced_solution_check<P: CsboProblem + ?Sized>(
    reduced: &ReducedSbo<'_, P>,
    x: &DVector<f64>,
    samples: &[JointSample],
    constants: &RegularityConstants,
    tol: f64,
) -> Result<BoundCheck> {
    let problem = reduced.problem();
    let ystar = lower_solutions(problem, x, samples, tol)?;
    let w = solve_reduced_lower_exact(reduced, x, samples, tol)?;
    let w_ls = least_squares_w(reduced.map(), samples, &ystar)?;
    Ok(BoundCheck {
        lhs: mean_residual(reduced.map(), &w, samples, &ystar, 2)?,
        rhs: 2.0 * constants.l_g1 / constants.mu * mean_residual(reduced.map(), &w_ls, samples, &ystar, 2)?,
    })
}

/// Stationarity transfer at `x`:
/// `‖∇F(x)‖² ≤ 2 ε̂² + 2 K² (2 L_g1 / μ) · mean ‖W_ls Φ − y⋆‖²` with
/// `ε̂ = ‖∇F_Φ(x)‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationarityCheck {
    pub bound: BoundCheck,
    pub eps_hat: f64,
    pub ls_residual: f64,
}

pub fn stationarity_check<P: CsboProblem + ?Sized>(
    reduced: &ReducedSbo<'_, P>,
    x: &DVector<f64>,
    samples: &[JointSample],
    constants: &RegularityConstants,
    tol: f64,
) -> Result<StationarityCheck> {
    let problem = reduced.problem();
    let full = exact_hypergradient(problem, x, samples, tol)?;
    let eps_hat = exact_reduced_hypergradient(reduced, x, samples, tol)?.gradient.norm();
    let ystar = lower_solutions(problem, x, samples, tol)?;
    let w_ls = least_squares_w(reduced.map(), samples, &ystar)?;
    let ls_residual = mean_residual(reduced.map(), &w_ls, samples, &ystar, 2)?;
    let k = constants.k;
    Ok(StationarityCheck {
        bound: BoundCheck {
            lhs: full.norm_squared(),
            rhs: 2.0 * eps_hat * eps_hat + 2.0 * k * k * (2.0 * constants.l_g1 / constants.mu) * ls_residual,
        },
        eps_hat,
        ls_residual,
    })
}
