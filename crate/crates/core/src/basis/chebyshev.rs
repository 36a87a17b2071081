//! One-dimensional Chebyshev series tools: coefficients, evaluation,
//! decay fitting and the degree needed for a target uniform error.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::RangeInclusive;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Coefficients `a_0..a_degree` of `f = Σ a_k T_k` on `[-1, 1]`, by
/// Chebyshev–Gauss quadrature at `4 (degree + 1)` nodes.
pub fn chebyshev_coefficients(f: impl Fn(f64) -> f64, degree: usize) -> Result<Vec<f64>> {
    let nodes = 4 * (degree + 1);
    let theta: Vec<f64> = (0..nodes)
        .map(|j| PI * (j as f64 + 0.5) / nodes as f64)
        .collect();
    let values: Vec<f64> = theta.iter().map(|&t| f(libm::cos(t))).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("function values at Chebyshev nodes"));
    }
    let coeffs = (0..=degree)
        .map(|k| {
            let s: f64 = theta
                .iter()
                .zip(&values)
                .map(|(&t, &v)| v * libm::cos(k as f64 * t))
                .sum();
            let scale = if k == 0 { 1.0 } else { 2.0 };
            scale * s / nodes as f64
        })
        .collect();
    Ok(coeffs)
}

/// Evaluates `Σ a_k T_k(u)` by Clenshaw's recurrence.
pub fn chebyshev_eval(coeffs: &[f64], u: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &a in coeffs.iter().skip(1).rev() {
        let b0 = 2.0 * u * b1 - b2 + a;
        b2 = b1;
        b1 = b0;
    }
    coeffs.first().copied().unwrap_or(0.0) + u * b1 - b2
}

/// Exact unweighted Gram matrix `B_ij = ½ ∫ T_i T_j dx` for `i, j < n`.
pub fn chebyshev_gram_1d(n: usize) -> DMatrix<f64> {
    // ∫ T_k over [-1, 1]
    let integral = |k: usize| {
        if k % 2 == 1 {
            0.0
        } else {
            let k = k as f64;
            2.0 / (1.0 - k * k)
        }
    };
    DMatrix::from_fn(n, n, |i, j| {
        0.25 * (integral(i + j) + integral(i.abs_diff(j)))
    })
}

/// Geometric envelope `|a_k| ≤ 2 M ρ^{-k}` fitted to a coefficient sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Least-squares slope of `ln |a_k|` against `k`.
    pub slope: f64,
    pub rho: f64,
    pub m: f64,
}

impl DecayFit {
    pub fn bound(&self, k: usize) -> f64 {
        2.0 * self.m * libm::pow(self.rho, -(k as f64))
    }
}

/// Coefficients below this magnitude are quadrature noise.
const COEFF_FLOOR: f64 = 1e-14;

/// Fits `ρ` from the log-linear slope over `k_range` (capped at `e^{1/2}`,
/// the largest ellipse parameter the envelope lemma admits) and then the
/// smallest `M` such that the envelope covers every coefficient above the
/// noise floor.
pub fn fit_geometric_decay(coeffs: &[f64], k_range: RangeInclusive<usize>) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = k_range
        .filter(|&k| k < coeffs.len() && coeffs[k].abs() > COEFF_FLOOR)
        .map(|k| (k as f64, libm::log(coeffs[k].abs())))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidArgument(
            "decay fit needs two coefficients above the noise floor".into(),
        ));
    }
    let n = pts.len() as f64;
    let mean_k = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_l = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_k) * (p.0 - mean_k)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_k) * (p.1 - mean_l)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::Infeasible(alloc::format!(
            "coefficients do not decay (fitted log-slope {slope})"
        )));
    }
    let rho = libm::exp(-slope).min(libm::exp(0.5));
    let m = coeffs
        .iter()
        .enumerate()
        .filter(|(_, a)| a.abs() > COEFF_FLOOR)
        .map(|(k, a)| a.abs() * libm::pow(rho, k as f64) / 2.0)
        .fold(0.0, f64::max);
    Ok(DecayFit { slope, rho, m })
}

/// Uniform truncation error bound `M (2/(ρ−1))^d [1 − (1 − ρ^{−n})^d]` for a
/// `d`-dimensional series truncated at per-dimension degree `n`.
pub fn truncation_residual_bound(m: f64, rho: f64, n: usize, d: usize) -> f64 {
    let d = d as i32;
    m * libm::pow(2.0 / (rho - 1.0), d as f64)
        * (1.0 - libm::pow(1.0 - libm::pow(rho, -(n as f64)), d as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegreeBound {
    /// Polynomial count per dimension, `n̲`.
    pub per_dimension: u64,
    /// Total feature count `N̲ = n̲^{d_ξ}`.
    pub total: u64,
}

/// Per-dimension count `n̲` and total `N̲ = n̲^{d_ξ}` guaranteeing a uniform
/// error of at most `eps_tilde` for a map bounded by `m` on the ellipse `ρ`.
pub fn chebyshev_degree_for_tolerance(
    eps_tilde: f64,
    m: f64,
    rho: f64,
    d_xi: usize,
    d_y: usize,
) -> Result<DegreeBound> {
    if !(eps_tilde > 0.0) || !(m > 0.0) {
        return Err(Error::InvalidArgument("tolerance and bound M must be positive".into()));
    }
    if !(rho > 1.0 && rho <= libm::exp(0.5)) {
        return Err(Error::InvalidArgument(alloc::format!(
            "ellipse parameter {rho} outside (1, e^(1/2)]"
        )));
    }
    if d_xi == 0 || d_y == 0 {
        return Err(Error::InvalidArgument("dimensions must be positive".into()));
    }
    let d = d_xi as f64;
    let shrink = eps_tilde / (m * libm::sqrt(d_y as f64)) * libm::pow((rho - 1.0) / 2.0, d);
    if !(shrink > 0.0 && shrink < 1.0) {
        return Err(Error::Infeasible(alloc::format!(
            "tolerance too large: ε̃/(M√d_y)·((ρ−1)/2)^d = {shrink} must lie in (0, 1)"
        )));
    }
    let inner = 1.0 - libm::pow(1.0 - shrink, 1.0 / d);
    if !(inner > 0.0 && inner < 1.0) {
        return Err(Error::Infeasible(alloc::format!(
            "tolerance too small for double precision: 1 − (1 − {shrink})^(1/d) rounds to {inner}"
        )));
    }
    let n = libm::ceil(-libm::log(inner) / libm::log(rho));
    let per_dimension = n as u64;
    let total = per_dimension
        .checked_pow(d_xi as u32)
        .ok_or_else(|| Error::Infeasible("feature count overflows u64".into()))?;
    Ok(DegreeBound {
        per_dimension,
        total,
    })
}
