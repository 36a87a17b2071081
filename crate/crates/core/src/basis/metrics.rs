//! Conditioning metrics of a feature map: `M_Φ = max(1, sup ‖Φ‖)` and
//! `m_Φ = min(1, λ_min(E[ΦΦᵀ]))`, estimated from context samples.

use nalgebra::DMatrix;

use super::{BasisKind, FeatureMap};
use crate::error::{Error, Result};
use crate::linalg::sym_eig_extremes;

/// Eigenvalues this far below zero are treated as round-off on a PSD matrix.
const EIG_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisMetrics {
    pub sup_norm: f64,
    pub min_eig: f64,
    pub n_samples: usize,
}

/// `max(1, max_i ‖Φ(ξ_i)‖₂)`.
pub fn estimate_sup_norm(map: &FeatureMap, samples: &[&[f64]]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples("sup-norm estimate"));
    }
    let mut phi = alloc::vec![0.0; map.len()];
    let mut best: f64 = 1.0;
    for xi in samples {
        map.evaluate_into(xi, &mut phi)?;
        let norm = libm::sqrt(phi.iter().map(|v| v * v).sum::<f64>());
        best = best.max(norm);
    }
    Ok(best)
}

/// Closed-form bound on `sup ‖Φ‖` where one is known: `√N` for Chebyshev
/// (every atom is bounded by one) and `1` for indicators.
pub fn analytic_sup_bound(map: &FeatureMap) -> Option<f64> {
    match map.kind() {
        BasisKind::Chebyshev => Some(libm::sqrt(map.len() as f64)),
        BasisKind::Indicator => Some(1.0),
        _ => None,
    }
}

/// `Σ̂ = (1/n) Σ Φ(ξ_i) Φ(ξ_i)ᵀ`.
pub fn empirical_covariance(map: &FeatureMap, samples: &[&[f64]]) -> Result<DMatrix<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples("feature covariance"));
    }
    let n = map.len();
    let mut sigma = DMatrix::zeros(n, n);
    let mut phi = alloc::vec![0.0; n];
    for xi in samples {
        map.evaluate_into(xi, &mut phi)?;
        for i in 0..n {
            if phi[i] == 0.0 {
                continue;
            }
            for j in i..n {
                sigma[(i, j)] += phi[i] * phi[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            sigma[(i, j)] = sigma[(j, i)];
        }
    }
    Ok(sigma / samples.len() as f64)
}

/// `min(1, λ_min(Σ̂))`, with tiny negative round-off clipped to zero.
pub fn estimate_min_eigenvalue(map: &FeatureMap, samples: &[&[f64]]) -> Result<f64> {
    if samples.len() < map.len() {
        return Err(Error::RankDeficient {
            samples: samples.len(),
            features: map.len(),
        });
    }
    let sigma = empirical_covariance(map, samples)?;
    let (min, _) = sym_eig_extremes(&sigma);
    if min < -EIG_CLIP {
        return Err(Error::IllConditioned { lambda_min: min });
    }
    Ok(min.clamp(0.0, 1.0))
}

pub fn basis_metrics(map: &FeatureMap, samples: &[&[f64]]) -> Result<BasisMetrics> {
    Ok(BasisMetrics {
        sup_norm: estimate_sup_norm(map, samples)?,
        min_eig: estimate_min_eigenvalue(map, samples)?,
        n_samples: samples.len(),
    })
}
