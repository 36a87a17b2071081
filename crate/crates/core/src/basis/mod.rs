//! Feature maps over a bounded context box.
//!
//! A [`FeatureMap`] evaluates `Φ(ξ) ∈ R^N` after rescaling `ξ` affinely onto
//! `[-1, 1]^d`. Chebyshev, Fourier and monomial maps list their multi-indices
//! in graded lexicographic order, so any prefix of length `N` is a principal
//! block of the full tensor basis and the constant atom always comes first.

mod chebyshev;
mod metrics;

pub use chebyshev::{
    chebyshev_coefficients, chebyshev_degree_for_tolerance, chebyshev_eval, chebyshev_gram_1d,
    fit_geometric_decay, truncation_residual_bound, DecayFit, DegreeBound,
};
pub use metrics::{
    analytic_sup_bound, basis_metrics, empirical_covariance, estimate_min_eigenvalue,
    estimate_sup_norm, BasisMetrics,
};

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Per-dimension bounds of the context support.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Slack allowed when checking that a context lies in its box.
pub const DOMAIN_TOLERANCE: f64 = 1e-12;

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidArgument("domain box needs at least one dimension".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                what: "domain upper bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidArgument(alloc::format!(
                    "domain bounds of dimension {i} must be finite"
                )));
            }
            if lo >= hi {
                return Err(Error::InvalidArgument(alloc::format!(
                    "domain dimension {i}: lower {lo} must be below upper {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    /// The reference cube `[-1, 1]^dim`.
    pub fn symmetric_unit(dim: usize) -> Result<Self> {
        Self::new(vec![-1.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn check(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "context",
                expected: self.dim(),
                got: xi.len(),
            });
        }
        for (i, &v) in xi.iter().enumerate() {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            let slack = DOMAIN_TOLERANCE * (hi - lo).max(1.0);
            if !(v >= lo - slack && v <= hi + slack) {
                return Err(Error::DomainViolation {
                    coord: i,
                    value: v,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(())
    }

    /// Affine image of coordinate `i` on `[-1, 1]`, clamped against rounding.
    pub fn rescale(&self, i: usize, v: f64) -> f64 {
        let (lo, hi) = (self.lower[i], self.upper[i]);
        (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisKind {
    Chebyshev,
    Fourier,
    Monomial,
    Indicator,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Chebyshev => "chebyshev",
            BasisKind::Fourier => "fourier",
            BasisKind::Monomial => "monomial",
            BasisKind::Indicator => "indicator",
        }
    }
}

impl core::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chebyshev" => Ok(BasisKind::Chebyshev),
            "fourier" => Ok(BasisKind::Fourier),
            "monomial" => Ok(BasisKind::Monomial),
            "indicator" => Ok(BasisKind::Indicator),
            other => Err(Error::InvalidArgument(alloc::format!("unknown basis kind `{other}`"))),
        }
    }
}

/// A truncated basis `Φ_N` together with the box it is defined on.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    kind: BasisKind,
    multi_indices: Vec<Vec<u32>>,
    domain: DomainBox,
    // highest atom index used in each dimension, sizes the evaluation scratch
    max_index: Vec<u32>,
}

impl FeatureMap {
    fn from_indices(kind: BasisKind, multi_indices: Vec<Vec<u32>>, domain: DomainBox) -> Self {
        let dim = domain.dim();
        let mut max_index = vec![0u32; dim];
        for idx in &multi_indices {
            for (m, &k) in max_index.iter_mut().zip(idx) {
                *m = (*m).max(k);
            }
        }
        Self {
            kind,
            multi_indices,
            domain,
            max_index,
        }
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    /// Number of features `N`.
    pub fn len(&self) -> usize {
        self.multi_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multi_indices.is_empty()
    }

    pub fn multi_indices(&self) -> &[Vec<u32>] {
        &self.multi_indices
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    /// `Φ(ξ)` as a fresh vector.
    pub fn evaluate(&self, xi: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.len());
        self.evaluate_into(xi, out.as_mut_slice())?;
        Ok(out)
    }

    /// Writes `Φ(ξ)` into `out`, which must have length `N`.
    pub fn evaluate_into(&self, xi: &[f64], out: &mut [f64]) -> Result<()> {
        self.domain.check(xi)?;
        if out.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "feature output buffer",
                expected: self.len(),
                got: out.len(),
            });
        }
        if self.kind == BasisKind::Indicator {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[self.cell_of(xi[0])] = 1.0;
            return Ok(());
        }

        // atoms[d][k] = k-th one-dimensional atom at the rescaled coordinate d
        let atoms: Vec<Vec<f64>> = (0..self.domain.dim())
            .map(|d| {
                let u = self.domain.rescale(d, xi[d]);
                let count = self.max_index[d] as usize + 1;
                match self.kind {
                    BasisKind::Chebyshev => chebyshev_atoms(u, count),
                    BasisKind::Fourier => fourier_atoms(u, count),
                    BasisKind::Monomial => monomial_atoms(u, count),
                    BasisKind::Indicator => unreachable!(),
                }
            })
            .collect();
        for (slot, idx) in out.iter_mut().zip(&self.multi_indices) {
            *slot = idx
                .iter()
                .enumerate()
                .map(|(d, &k)| atoms[d][k as usize])
                .product();
        }
        Ok(())
    }

    /// Cell of an equal-width partition of the first coordinate. Cells are
    /// right-open except the last, which also contains the upper bound.
    pub fn cell_of(&self, v: f64) -> usize {
        let n = self.len();
        let (lo, hi) = (self.domain.lower[0], self.domain.upper[0]);
        let t = (v - lo) / (hi - lo) * n as f64;
        if t <= 0.0 {
            0
        } else {
            (libm::floor(t) as usize).min(n - 1)
        }
    }
}

fn check_build(max_total_entries: usize, domain: &DomainBox, d_xi: usize) -> Result<()> {
    if max_total_entries == 0 {
        return Err(Error::InvalidArgument("a feature map needs at least one feature".into()));
    }
    if d_xi == 0 {
        return Err(Error::InvalidArgument("context dimension must be positive".into()));
    }
    if domain.dim() != d_xi {
        return Err(Error::DimensionMismatch {
            what: "domain dimension",
            expected: d_xi,
            got: domain.dim(),
        });
    }
    Ok(())
}

/// Tensor-product Chebyshev polynomials `∏ T_{k_j}(ξ_j)`.
pub fn build_chebyshev(d_xi: usize, max_total_entries: usize, domain: DomainBox) -> Result<FeatureMap> {
    check_build(max_total_entries, &domain, d_xi)?;
    let idx = graded_lex_indices(d_xi, max_total_entries);
    Ok(FeatureMap::from_indices(BasisKind::Chebyshev, idx, domain))
}

/// Products of the atoms `1, cos(πu), sin(πu), cos(2πu), sin(2πu), ...`.
pub fn build_fourier(d_xi: usize, max_total_entries: usize, domain: DomainBox) -> Result<FeatureMap> {
    check_build(max_total_entries, &domain, d_xi)?;
    let idx = graded_lex_indices(d_xi, max_total_entries);
    Ok(FeatureMap::from_indices(BasisKind::Fourier, idx, domain))
}

pub fn build_monomial(d_xi: usize, max_total_entries: usize, domain: DomainBox) -> Result<FeatureMap> {
    check_build(max_total_entries, &domain, d_xi)?;
    let idx = graded_lex_indices(d_xi, max_total_entries);
    Ok(FeatureMap::from_indices(BasisKind::Monomial, idx, domain))
}

/// One-hot encoding of the equal-width cell containing a scalar context.
pub fn build_indicator(n_cells: usize, domain: DomainBox) -> Result<FeatureMap> {
    if domain.dim() != 1 {
        return Err(Error::InvalidArgument(alloc::format!(
            "indicator basis needs a one-dimensional context, got {}",
            domain.dim()
        )));
    }
    check_build(n_cells, &domain, 1)?;
    let idx = (0..n_cells as u32).map(|c| vec![c]).collect();
    Ok(FeatureMap::from_indices(BasisKind::Indicator, idx, domain))
}

/// Builds any basis kind from a shared `(kind, N)` description.
pub fn build(kind: BasisKind, n: usize, domain: DomainBox) -> Result<FeatureMap> {
    let d = domain.dim();
    match kind {
        BasisKind::Chebyshev => build_chebyshev(d, n, domain),
        BasisKind::Fourier => build_fourier(d, n, domain),
        BasisKind::Monomial => build_monomial(d, n, domain),
        BasisKind::Indicator => build_indicator(n, domain),
    }
}

/// First `count` multi-indices of dimension `dim`, sorted by total degree
/// and lexicographically within a degree.
pub fn graded_lex_indices(dim: usize, count: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::with_capacity(count);
    let mut degree = 0u32;
    while out.len() < count {
        let mut current = vec![0u32; dim];
        push_compositions(&mut current, 0, degree, count, &mut out);
        degree += 1;
    }
    out
}

fn push_compositions(
    current: &mut Vec<u32>,
    pos: usize,
    remaining: u32,
    count: usize,
    out: &mut Vec<Vec<u32>>,
) {
    if out.len() >= count {
        return;
    }
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for k in 0..=remaining {
        current[pos] = k;
        push_compositions(current, pos + 1, remaining - k, count, out);
        if out.len() >= count {
            return;
        }
    }
}

/// `T_0(u), ..., T_{count-1}(u)` by the three-term recurrence.
pub fn chebyshev_atoms(u: f64, count: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(count);
    t.push(1.0);
    if count > 1 {
        t.push(u);
    }
    for k in 2..count {
        let next = 2.0 * u * t[k - 1] - t[k - 2];
        t.push(next);
    }
    t.truncate(count);
    t
}

fn fourier_atoms(u: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|j| {
            if j == 0 {
                1.0
            } else {
                let freq = j.div_ceil(2) as f64;
                if j % 2 == 1 {
                    libm::cos(PI * freq * u)
                } else {
                    libm::sin(PI * freq * u)
                }
            }
        })
        .collect()
}

fn monomial_atoms(u: f64, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    let mut p = 1.0;
    for _ in 0..count {
        out.push(p);
        p *= u;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit() -> DomainBox {
        DomainBox::symmetric_unit(1).unwrap()
    }

    #[test]
    fn graded_lex_small_cases() {
        assert_eq!(graded_lex_indices(1, 3), vec![vec![0], vec![1], vec![2]]);
        assert_eq!(
            graded_lex_indices(2, 4),
            vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![0, 2]]
        );
        let idx = graded_lex_indices(2, 6);
        let degrees: Vec<u32> = idx.iter().map(|i| i.iter().sum()).collect();
        assert_eq!(degrees, vec![0, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn chebyshev_two_dims_counts_by_degree() {
        let map = build_chebyshev(2, 4, DomainBox::symmetric_unit(2).unwrap()).unwrap();
        let idx = map.multi_indices();
        assert_eq!(idx[0], vec![0, 0]);
        let count = |d: u32| idx.iter().filter(|i| i.iter().sum::<u32>() == d).count();
        assert_eq!((count(0), count(1), count(2)), (1, 2, 1));
    }

    #[test]
    fn chebyshev_values() {
        let map = build_chebyshev(1, 3, unit()).unwrap();
        let phi = map.evaluate(&[0.5]).unwrap();
        assert_abs_diff_eq!(phi.as_slice(), [1.0, 0.5, -0.5].as_slice(), epsilon = 1e-15);

        let map = build_chebyshev(1, 2, DomainBox::interval(0.0, 2.0).unwrap()).unwrap();
        let phi = map.evaluate(&[1.5]).unwrap();
        assert_abs_diff_eq!(phi.as_slice(), [1.0, 0.5].as_slice(), epsilon = 1e-15);

        let constant = build_chebyshev(1, 1, DomainBox::interval(3.0, 7.0).unwrap()).unwrap();
        assert_eq!(constant.evaluate(&[5.5]).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn fourier_and_monomial_values() {
        let f = build_fourier(1, 3, unit()).unwrap();
        let phi = f.evaluate(&[0.0]).unwrap();
        assert_abs_diff_eq!(phi.as_slice(), [1.0, 1.0, 0.0].as_slice(), epsilon = 1e-15);
        let phi = build_fourier(1, 5, unit()).unwrap().evaluate(&[0.25]).unwrap();
        let expect = [
            1.0,
            libm::cos(PI * 0.25),
            libm::sin(PI * 0.25),
            libm::cos(2.0 * PI * 0.25),
            libm::sin(2.0 * PI * 0.25),
        ];
        assert_abs_diff_eq!(phi.as_slice(), expect.as_slice(), epsilon = 1e-15);

        let m = build_monomial(1, 3, unit()).unwrap();
        let phi = m.evaluate(&[0.5]).unwrap();
        assert_abs_diff_eq!(phi.as_slice(), [1.0, 0.5, 0.25].as_slice(), epsilon = 1e-15);
        assert_eq!(build_monomial(1, 1, unit()).unwrap().len(), 1);
    }

    #[test]
    fn indicator_cells_and_boundary() {
        let map = build_indicator(2, DomainBox::interval(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(map.evaluate(&[0.25]).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(map.evaluate(&[0.5]).unwrap().as_slice(), &[0.0, 1.0]);
        assert_eq!(map.evaluate(&[1.0]).unwrap().as_slice(), &[0.0, 1.0]);
        assert_eq!(map.evaluate(&[0.0]).unwrap().as_slice(), &[1.0, 0.0]);
        let single = build_indicator(1, DomainBox::interval(-3.0, 3.0).unwrap()).unwrap();
        assert_eq!(single.evaluate(&[2.9]).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn build_errors() {
        assert!(build_chebyshev(1, 0, unit()).is_err());
        assert!(build_chebyshev(2, 3, unit()).is_err());
        assert!(build_indicator(3, DomainBox::symmetric_unit(2).unwrap()).is_err());
        assert!(DomainBox::interval(1.0, 1.0).is_err());
        assert!(DomainBox::interval(0.0, f64::INFINITY).is_err());
        assert!(DomainBox::new(vec![0.0], vec![]).is_err());
    }

    #[test]
    fn domain_violation_and_tolerance() {
        let map = build_chebyshev(1, 3, unit()).unwrap();
        assert!(matches!(map.evaluate(&[1.1]), Err(Error::DomainViolation { .. })));
        assert!(map.evaluate(&[1.0 + 1e-13]).is_ok());
        assert!(matches!(map.evaluate(&[f64::NAN]), Err(Error::DomainViolation { .. })));
        assert!(matches!(
            map.evaluate(&[0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn recurrence_matches_trigonometric_definition() {
        for i in 0..1000 {
            let u = -1.0 + 2.0 * i as f64 / 999.0;
            let atoms = chebyshev_atoms(u, 65);
            for (k, &t) in atoms.iter().enumerate() {
                let exact = libm::cos(k as f64 * libm::acos(u));
                assert!((t - exact).abs() <= 1e-12, "k={k} u={u}: {t} vs {exact}");
            }
        }
    }
}
