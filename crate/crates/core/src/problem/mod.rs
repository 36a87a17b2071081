//! Contextual bilevel problem instances.
//!
//! A problem exposes joint sampling of `(ξ, η)` plus exact first and second
//! derivatives of the upper objective `f(x, y, ξ, η)` and the lower objective
//! `g(x, y, ξ, η)`, which must be strongly convex in `y`.

mod hyperclean;
mod quadratic;
mod traffic;

pub use hyperclean::{build_hyperclean, HypercleanParams, HypercleanProblem, LabelledData};
pub use quadratic::{build_quadratic, QuadraticParams, QuadraticProblem};
pub use traffic::{build_traffic, TrafficParams, TrafficProblem};

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::basis::DomainBox;
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, sym_eig_extremes};
use crate::rng::StreamRng;

/// One draw `(ξ, η)` from the joint distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSample {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub d_x: usize,
    pub d_y: usize,
    pub d_xi: usize,
    pub d_eta: usize,
}

/// A random evaluation point used by derivative checks and constant probes.
#[derive(Debug, Clone)]
pub struct Probe {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub sample: JointSample,
}

/// Oracle interface of a contextual stochastic bilevel problem.
///
/// `hess_g_xy` is the mixed block `∇₁₂g ∈ R^{d_x × d_y}`, i.e. the Jacobian of
/// `∇_y g` with respect to `x`, transposed.
pub trait CsboProblem: Send + Sync {
    fn name(&self) -> &'static str;
    fn dims(&self) -> Dims;
    fn domain(&self) -> &DomainBox;

    /// `n` i.i.d. joint draws, deterministic in `seed`.
    fn sample_joint(&self, n: usize, seed: u64) -> Result<Vec<JointSample>>;

    fn f_value(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> f64;
    fn grad_f_x(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DVector<f64>;
    fn grad_f_y(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DVector<f64>;

    fn g_value(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> f64;
    fn grad_g_x(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DVector<f64>;
    fn grad_g_y(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DVector<f64>;
    fn hess_g_yy(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DMatrix<f64>;
    fn hess_g_xy(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DMatrix<f64>;

    /// `∇²_yy g · v` without forming the Hessian, where an instance can.
    fn hess_g_yy_apply(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        xi: &[f64],
        eta: &[f64],
        v: &DVector<f64>,
    ) -> DVector<f64> {
        self.hess_g_yy(x, y, xi, eta) * v
    }

    /// `∇₁₂g · v` for a direction `v ∈ R^{d_y}`.
    fn hess_g_xy_apply(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        xi: &[f64],
        eta: &[f64],
        v: &DVector<f64>,
    ) -> DVector<f64> {
        self.hess_g_xy(x, y, xi, eta) * v
    }

    /// Weighted noise values whose weighted sum of `g` equals `E_{η|ξ} g` up
    /// to terms constant in `(x, y)`. Exact lower-level solves minimize this
    /// conditional objective.
    fn conditional_eta(&self, xi: &[f64]) -> Vec<(f64, Vec<f64>)>;

    /// Closed-form `y⋆(x, ξ)` where the instance has one.
    fn exact_lower_solution(&self, _x: &DVector<f64>, _xi: &[f64]) -> Option<DVector<f64>> {
        None
    }

    /// Ground-truth upper variable when the data were generated from one.
    fn ground_truth_x(&self) -> Option<DVector<f64>> {
        None
    }

    fn initial_x(&self) -> DVector<f64> {
        DVector::zeros(self.dims().d_x)
    }

    /// Keeps `x` inside the set where the instance is defined.
    fn project_x(&self, _x: &mut DVector<f64>) {}

    /// Upper bound on `λ_max(∇²_yy g)` when known in closed form.
    fn lower_hessian_bound(&self) -> Option<f64> {
        None
    }

    /// Random point from the region where the instance's constants are probed.
    fn random_probe(&self, rng: &mut StreamRng) -> Probe;

    /// Lipschitz and strong-convexity constants of the instance.
    fn regularity_constants(&self) -> Result<RegularityConstants> {
        estimate_regularity(self, 200, 0)
    }
}

/// `K = L_f1 + L_g2 L_f0/μ + L_g2 L_g1 L_f0/μ² + L_f1 L_g1/μ`.
pub fn expressiveness_constant(l_f0: f64, l_f1: f64, l_g1: f64, l_g2: f64, mu: f64) -> f64 {
    l_f1 + l_g2 * l_f0 / mu + l_g2 * l_g1 * l_f0 / (mu * mu) + l_f1 * l_g1 / mu
}

/// Regularity constants and the derived constant `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityConstants {
    pub l_f0: f64,
    pub l_f1: f64,
    pub l_g1: f64,
    pub l_g2: f64,
    pub mu: f64,
    pub k: f64,
    /// `false` when some constant is a probed lower bound rather than exact.
    pub exact: bool,
    /// Number of probe points behind estimated constants.
    pub probes: usize,
}

impl RegularityConstants {
    pub fn new(l_f0: f64, l_f1: f64, l_g1: f64, l_g2: f64, mu: f64) -> Result<Self> {
        let all = [l_f0, l_f1, l_g1, l_g2, mu];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) || !(mu > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "constants must be finite and non-negative with μ > 0, got {all:?}"
            )));
        }
        Ok(Self {
            l_f0,
            l_f1,
            l_g1,
            l_g2,
            mu,
            k: expressiveness_constant(l_f0, l_f1, l_g1, l_g2, mu),
            exact: true,
            probes: 0,
        })
    }
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Probes `n` random points (and pairs of points sharing `(ξ, η)`) to bound
/// the instance constants from below. `μ` is the smallest Hessian eigenvalue
/// seen; Lipschitz constants are the largest difference quotients seen.
pub fn estimate_regularity<P: CsboProblem + ?Sized>(
    problem: &P,
    n: usize,
    seed: u64,
) -> Result<RegularityConstants> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two probes".into()));
    }
    let mut rng = crate::rng::stream(seed, crate::rng::streams::PROBES);
    let probes: Vec<Probe> = (0..n).map(|_| problem.random_probe(&mut rng)).collect();
    let (mut mu, mut l_f0, mut l_f1, mut l_g1, mut l_g2) =
        (f64::INFINITY, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (i, p) in probes.iter().enumerate() {
        let (xi, eta) = (&p.sample.xi[..], &p.sample.eta[..]);
        let hyy = problem.hess_g_yy(&p.x, &p.y, xi, eta);
        mu = mu.min(sym_eig_extremes(&hyy).0);
        let gf = stack(&problem.grad_f_x(&p.x, &p.y, xi, eta), &problem.grad_f_y(&p.x, &p.y, xi, eta));
        l_f0 = l_f0.max(gf.norm());

        // partner point: other (x, y), same (ξ, η)
        let q = &probes[(i + 1) % n];
        let dist = stack(&(&p.x - &q.x), &(&p.y - &q.y)).norm();
        if dist == 0.0 {
            continue;
        }
        let gf_q = stack(&problem.grad_f_x(&q.x, &q.y, xi, eta), &problem.grad_f_y(&q.x, &q.y, xi, eta));
        l_f1 = l_f1.max((&gf - gf_q).norm() / dist);
        let gg = stack(&problem.grad_g_x(&p.x, &p.y, xi, eta), &problem.grad_g_y(&p.x, &p.y, xi, eta));
        let gg_q = stack(&problem.grad_g_x(&q.x, &q.y, xi, eta), &problem.grad_g_y(&q.x, &q.y, xi, eta));
        l_g1 = l_g1.max((gg - gg_q).norm() / dist);
        let dyy = hyy - problem.hess_g_yy(&q.x, &q.y, xi, eta);
        let dxy = problem.hess_g_xy(&p.x, &p.y, xi, eta) - problem.hess_g_xy(&q.x, &q.y, xi, eta);
        let stacked = DMatrix::from_fn(dyy.nrows() + dxy.nrows(), dyy.ncols(), |r, c| {
            if r < dyy.nrows() {
                dyy[(r, c)]
            } else {
                dxy[(r - dyy.nrows(), c)]
            }
        });
        l_g2 = l_g2.max(spectral_norm(&stacked) / dist);
    }
    let mut rc = RegularityConstants::new(l_f0, l_f1.max(1e-12), l_g1.max(mu), l_g2, mu)?;
    rc.exact = false;
    rc.probes = n;
    Ok(rc)
}

/// Uniform draw of a scalar in `[lo, hi]`.
pub(crate) fn uniform(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}
