//! Small dense helpers shared by the oracles and metrics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn sym_eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Spectral norm of an arbitrary matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    let (_, max) = sym_eig_extremes(&gram);
    libm::sqrt(max.max(0.0))
}

/// Solves `m z = rhs` for symmetric positive definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let (min, _) = sym_eig_extremes(m);
    if !(min > 1e-12) {
        return Err(Error::IllConditioned { lambda_min: min });
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or(Error::IllConditioned { lambda_min: min })?;
    Ok(chol.solve(rhs))
}

/// Row-major flattening of a matrix, the `vec` convention used for `W`.
pub fn vec_row_major(m: &DMatrix<f64>) -> DVector<f64> {
    let (r, c) = m.shape();
    DVector::from_fn(r * c, |k, _| m[(k / c, k % c)])
}

pub fn unvec_row_major(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| v[i * cols + j])
}

/// Dense Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}

/// Minimizes a strongly convex function by Newton steps with Armijo
/// backtracking, falling back to a gradient step when the Newton direction
/// is unusable. Stops once `‖∇‖ ≤ tol`.
pub fn minimize_strongly_convex(
    value: impl Fn(&DVector<f64>) -> f64,
    grad: impl Fn(&DVector<f64>) -> DVector<f64>,
    hess: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    start: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let mut y = start;
    let mut fy = value(&y);
    for _ in 0..max_iter {
        let g = grad(&y);
        let gnorm = g.norm();
        if !gnorm.is_finite() {
            return Err(Error::NonFinite("lower-level gradient"));
        }
        if gnorm <= tol {
            return Ok(y);
        }
        let h = hess(&y);
        let mut dir = match h.clone().cholesky() {
            Some(chol) => -chol.solve(&g),
            None => -g.clone(),
        };
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            dir = -g.clone();
            slope = -gnorm * gnorm;
        }
        // Near the optimum, objective differences fall below round-off and
        // the line search is done on the gradient norm instead.
        let flat = -slope <= 1e-10 * (1.0 + fy.abs());
        let mut accepted = false;
        if !flat {
            let mut t = 1.0;
            for _ in 0..60 {
                let cand = &y + &dir * t;
                let fc = value(&cand);
                if fc.is_finite() && fc <= fy + 1e-4 * t * slope {
                    y = cand;
                    fy = fc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
        }
        if !accepted {
            let mut t = 1.0;
            for _ in 0..60 {
                let cand = &y + &dir * t;
                if grad(&cand).norm() < gnorm {
                    fy = value(&cand);
                    y = cand;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
        }
        if !accepted {
            return Err(Error::NotConverged {
                iterations: max_iter,
                grad_norm: gnorm,
            });
        }
    }
    let gnorm = grad(&y).norm();
    if gnorm <= tol {
        Ok(y)
    } else {
        Err(Error::NotConverged {
            iterations: max_iter,
            grad_norm: gnorm,
        })
    }
}
