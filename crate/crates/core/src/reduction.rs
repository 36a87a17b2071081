//! The reduced problem in `(x, W)` obtained by substituting `y = W Φ(ξ)`.
//!
//! With `W ∈ R^{d_y × N}` stored row-major (`vec(W)[a·N + j] = W[a, j]`), the
//! chain rule gives
//!
//! * `∇_W g_Φ = ∇_y g · Φᵀ`,
//! * `∇²_WW g_Φ = ∇²_yy g ⊗ Φ Φᵀ`, applied as `V ↦ (∇²_yy g · V Φ) Φᵀ`,
//! * `∇²_xW g_Φ [V] = ∇₁₂g · V Φ`,
//!
//! and the same for `f`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::basis::FeatureMap;
use crate::error::{Error, Result};
use crate::linalg::kron;
use crate::problem::{CsboProblem, JointSample};

/// Largest `d_y · N` for which dense reduced Hessians are built.
pub const DENSE_LIMIT: usize = 512;

/// A sample together with its feature vector.
#[derive(Debug, Clone)]
pub struct Context<'s> {
    pub xi: &'s [f64],
    pub eta: &'s [f64],
    pub phi: DVector<f64>,
}

#[derive(Debug)]
pub struct ReducedSbo<'a, P: CsboProblem + ?Sized> {
    problem: &'a P,
    map: &'a FeatureMap,
}

impl<P: CsboProblem + ?Sized> Clone for ReducedSbo<'_, P> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<P: CsboProblem + ?Sized> Copy for ReducedSbo<'_, P> {}

impl<'a, P: CsboProblem + ?Sized> ReducedSbo<'a, P> {
    pub fn new(problem: &'a P, map: &'a FeatureMap) -> Result<Self> {
        let d_xi = problem.dims().d_xi;
        if map.domain().dim() != d_xi {
            return Err(Error::DimensionMismatch {
                what: "feature map context dimension",
                expected: d_xi,
                got: map.domain().dim(),
            });
        }
        Ok(Self { problem, map })
    }

    pub fn problem(&self) -> &'a P {
        self.problem
    }

    pub fn map(&self) -> &'a FeatureMap {
        self.map
    }

    /// Number of features `N`.
    pub fn n_features(&self) -> usize {
        self.map.len()
    }

    pub fn w_shape(&self) -> (usize, usize) {
        (self.problem.dims().d_y, self.map.len())
    }

    pub fn zero_w(&self) -> DMatrix<f64> {
        let (r, c) = self.w_shape();
        DMatrix::zeros(r, c)
    }

    pub fn context<'s>(&self, sample: &'s JointSample) -> Result<Context<'s>> {
        Ok(Context {
            xi: &sample.xi,
            eta: &sample.eta,
            phi: self.map.evaluate(&sample.xi)?,
        })
    }

    pub fn contexts<'s>(&self, samples: &'s [JointSample]) -> Result<Vec<Context<'s>>> {
        samples.iter().map(|s| self.context(s)).collect()
    }

    fn check_w(&self, w: &DMatrix<f64>) -> Result<()> {
        let (r, c) = self.w_shape();
        if w.shape() != (r, c) {
            return Err(Error::DimensionMismatch {
                what: "W entries",
                expected: r * c,
                got: w.len(),
            });
        }
        Ok(())
    }

    /// `y = W Φ(ξ)`.
    pub fn y_of(&self, w: &DMatrix<f64>, xi: &[f64]) -> Result<DVector<f64>> {
        self.check_w(w)?;
        Ok(w * self.map.evaluate(xi)?)
    }

    pub fn f_value(&self, x: &DVector<f64>, w: &DMatrix<f64>, c: &Context<'_>) -> f64 {
        self.problem.f_value(x, &(w * &c.phi), c.xi, c.eta)
    }

    pub fn g_value(&self, x: &DVector<f64>, w: &DMatrix<f64>, c: &Context<'_>) -> f64 {
        self.problem.g_value(x, &(w * &c.phi), c.xi, c.eta)
    }

    pub fn grad_gphi_w(&self, x: &DVector<f64>, w: &DMatrix<f64>, c: &Context<'_>) -> DMatrix<f64> {
        self.problem.grad_g_y(x, &(w * &c.phi), c.xi, c.eta) * c.phi.transpose()
    }

    pub fn grad_gphi_x(&self, x: &DVector<f64>, w: &DMatrix<f64>, c: &Context<'_>) -> DVector<f64> {
        self.problem.grad_g_x(x, &(w * &c.phi), c.xi, c.eta)
    }

    /// `∇²_WW g_Φ [V]` without forming the `(d_y N)²` operator.
    pub fn hess_gphi_ww_apply(
        &self,
        x: &DVector<f64>,
        w: &DMatrix<f64>,
        c: &Context<'_>,
        v: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let dir = v * &c.phi;
        self.problem.hess_g_yy_apply(x, &(w * &c.phi), c.xi, c.eta, &dir) * c.phi.transpose()
    }

    /// `∇²_xW g_Φ [V] ∈ R^{d_x}`.
    pub fn hess_gphi_xw_apply(
        &self,
        x: &DVector<f64>,
        w: &DMatrix<f64>,
        c: &Context<'_>,
        v: &DMatrix<f64>,
    ) -> DVector<f64> {
        let dir = v * &c.phi;
        self.problem.hess_g_xy_apply(x, &(w * &c.phi), c.xi, c.eta, &dir)
    }

    pub fn grad_fphi_x(&self, x: &DVector<f64>, w: &DMatrix<f64>, c: &Context<'_>) -> DVector<f64> {
        self.problem.grad_f_x(x, &(w * &c.phi), c.xi, c.eta)
    }

    pub fn grad_fphi_w(&self, x: &DVector<f64>, w: &DMatrix<f64>, c: &Context<'_>) -> DMatrix<f64> {
        self.problem.grad_f_y(x, &(w * &c.phi), c.xi, c.eta) * c.phi.transpose()
    }

    /// Dense `∇²_yy g ⊗ Φ Φᵀ` in the row-major `vec(W)` ordering.
    pub fn hess_gphi_ww_dense(
        &self,
        x: &DVector<f64>,
        w: &DMatrix<f64>,
        c: &Context<'_>,
    ) -> Result<DMatrix<f64>> {
        let (r, n) = self.w_shape();
        if r * n > DENSE_LIMIT {
            return Err(Error::TooLarge {
                size: r * n,
                limit: DENSE_LIMIT,
            });
        }
        let h = self.problem.hess_g_yy(x, &(w * &c.phi), c.xi, c.eta);
        Ok(kron(&h, &(&c.phi * c.phi.transpose())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_chebyshev, build_indicator, DomainBox};
    use crate::linalg::{unvec_row_major, vec_row_major};
    use crate::problem::build_quadratic;

    #[test]
    fn zero_w_gives_zero_y() {
        let p = build_quadratic(2, 3, 0).unwrap();
        let map = build_chebyshev(1, 4, DomainBox::symmetric_unit(1).unwrap()).unwrap();
        let r = ReducedSbo::new(&p, &map).unwrap();
        assert_eq!(r.y_of(&r.zero_w(), &[0.3]).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn constant_basis_returns_first_column() {
        let p = build_quadratic(2, 3, 0).unwrap();
        let map = build_chebyshev(1, 1, DomainBox::symmetric_unit(1).unwrap()).unwrap();
        let r = ReducedSbo::new(&p, &map).unwrap();
        let w = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        for xi in [-1.0, 0.0, 0.7] {
            assert_eq!(r.y_of(&w, &[xi]).unwrap(), w.column(0).into_owned());
        }
    }

    #[test]
    fn indicator_basis_selects_cell_column() {
        let p = build_quadratic(1, 2, 0).unwrap();
        let map = build_indicator(4, DomainBox::symmetric_unit(1).unwrap()).unwrap();
        let r = ReducedSbo::new(&p, &map).unwrap();
        let w = DMatrix::from_fn(2, 4, |a, j| (10 * a + j) as f64);
        assert_eq!(r.y_of(&w, &[0.1]).unwrap(), w.column(2).into_owned());
    }

    #[test]
    fn matrix_free_hessian_matches_kronecker() {
        let p = build_quadratic(2, 2, 4).unwrap();
        let map = build_chebyshev(1, 2, DomainBox::symmetric_unit(1).unwrap()).unwrap();
        let r = ReducedSbo::new(&p, &map).unwrap();
        let s = JointSample {
            xi: alloc::vec![0.4],
            eta: alloc::vec![0.1, -0.2],
        };
        let c = r.context(&s).unwrap();
        let x = DVector::from_vec(alloc::vec![0.3, -0.1]);
        let w = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let v = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.5, 2.0]);
        let dense = r.hess_gphi_ww_dense(&x, &w, &c).unwrap() * vec_row_major(&v);
        let free = r.hess_gphi_ww_apply(&x, &w, &c, &v);
        assert!((unvec_row_major(&dense, 2, 2) - free).amax() <= 1e-12);
    }

    #[test]
    fn rejects_mismatched_context_dimension() {
        let p = build_quadratic(1, 1, 0).unwrap();
        let map = build_chebyshev(2, 3, DomainBox::symmetric_unit(2).unwrap()).unwrap();
        assert!(ReducedSbo::new(&p, &map).is_err());
    }
}
