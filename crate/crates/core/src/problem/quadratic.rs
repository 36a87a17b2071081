//! Closed-form verification instance:
//! `g = ½ yᵀQy − yᵀ(Ax + b(ξ) + η)`, `f = ½‖y − η‖² + (λ_x/2)‖x‖²`,
//! with `b(ξ) = c ⊙ sin(ωξ) + d`, `η = ρ_m ξ·1 + ε`, `ε ~ N(0, σ²I)`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{uniform, CsboProblem, Dims, JointSample, Probe, RegularityConstants};
use crate::basis::DomainBox;
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, sym_eig_extremes};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticParams {
    /// Frequency `ω` of the context forcing `sin(ωξ)`.
    pub omega: f64,
    /// Slope of the conditional noise mean `m(ξ) = ρ_m ξ`.
    pub rho_m: f64,
    pub sigma: f64,
    pub lambda_x: f64,
}

impl Default for QuadraticParams {
    fn default() -> Self {
        Self {
            omega: 3.0,
            rho_m: 0.5,
            sigma: 0.1,
            lambda_x: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    params: QuadraticParams,
    q: DMatrix<f64>,
    q_inv: DMatrix<f64>,
    a: DMatrix<f64>,
    c: DVector<f64>,
    d: DVector<f64>,
    domain: DomainBox,
    mu: f64,
    lambda_max: f64,
}

pub fn build_quadratic(d_x: usize, d_y: usize, seed: u64) -> Result<QuadraticProblem> {
    QuadraticProblem::new(d_x, d_y, seed, QuadraticParams::default())
}

impl QuadraticProblem {
    pub fn new(d_x: usize, d_y: usize, seed: u64, params: QuadraticParams) -> Result<Self> {
        if d_x == 0 || d_y == 0 {
            return Err(Error::InvalidArgument("quadratic problem needs d_x, d_y ≥ 1".into()));
        }
        if !(params.sigma >= 0.0) || !(params.lambda_x >= 0.0) {
            return Err(Error::InvalidArgument("σ and λ_x must be non-negative".into()));
        }
        let mut rng = rng::stream(seed, rng::streams::PROBLEM);
        let mut gauss = |scale: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        };
        let s = DMatrix::from_fn(d_y, d_y, |_, _| gauss(1.0 / libm::sqrt(d_y as f64)));
        let q = DMatrix::identity(d_y, d_y) + s.transpose() * &s * 0.5;
        let a = DMatrix::from_fn(d_y, d_x, |_, _| gauss(1.0 / libm::sqrt(d_x as f64)));
        let c = DVector::from_fn(d_y, |_, _| gauss(1.0));
        let d = DVector::from_fn(d_y, |_, _| gauss(0.5));
        let q_inv = q
            .clone()
            .try_inverse()
            .ok_or(Error::IllConditioned { lambda_min: 0.0 })?;
        let (mu, lambda_max) = sym_eig_extremes(&q);
        Ok(Self {
            params,
            q,
            q_inv,
            a,
            c,
            d,
            domain: DomainBox::symmetric_unit(1)?,
            mu,
            lambda_max,
        })
    }

    pub fn params(&self) -> &QuadraticParams {
        &self.params
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn q_inv(&self) -> &DMatrix<f64> {
        &self.q_inv
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `λ_min(Q)`.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn forcing(&self, xi: &[f64]) -> DVector<f64> {
        let s = libm::sin(self.params.omega * xi[0]);
        self.c.map(|c| c * s) + &self.d
    }

    /// Conditional noise mean `m(ξ)·1`.
    pub fn noise_mean(&self, xi: &[f64]) -> DVector<f64> {
        DVector::from_element(self.q.nrows(), self.params.rho_m * xi[0])
    }

    fn rhs(&self, x: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DVector<f64> {
        &self.a * x + self.forcing(xi) + DVector::from_column_slice(eta)
    }
}

impl CsboProblem for QuadraticProblem {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn dims(&self) -> Dims {
        let d_y = self.q.nrows();
        Dims {
            d_x: self.a.ncols(),
            d_y,
            d_xi: 1,
            d_eta: d_y,
        }
    }

    fn domain(&self) -> &DomainBox {
        &self.domain
    }

    fn sample_joint(&self, n: usize, seed: u64) -> Result<Vec<JointSample>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        let mut rng = rng::stream(seed, rng::streams::TRAIN);
        let noise = Normal::new(0.0, self.params.sigma)
            .map_err(|_| Error::InvalidArgument("invalid noise scale".into()))?;
        Ok((0..n)
            .map(|_| {
                let xi = uniform(&mut rng, -1.0, 1.0);
                let mean = self.params.rho_m * xi;
                let eta = (0..self.q.nrows())
                    .map(|_| mean + noise.sample(&mut rng))
                    .collect();
                JointSample { xi: vec![xi], eta }
            })
            .collect())
    }

    fn f_value(&self, x: &DVector<f64>, y: &DVector<f64>, _xi: &[f64], eta: &[f64]) -> f64 {
        let r = y - DVector::from_column_slice(eta);
        0.5 * r.norm_squared() + 0.5 * self.params.lambda_x * x.norm_squared()
    }

    fn grad_f_x(&self, x: &DVector<f64>, _y: &DVector<f64>, _xi: &[f64], _eta: &[f64]) -> DVector<f64> {
        x * self.params.lambda_x
    }

    fn grad_f_y(&self, _x: &DVector<f64>, y: &DVector<f64>, _xi: &[f64], eta: &[f64]) -> DVector<f64> {
        y - DVector::from_column_slice(eta)
    }

    fn g_value(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> f64 {
        0.5 * y.dot(&(&self.q * y)) - y.dot(&self.rhs(x, xi, eta))
    }

    fn grad_g_x(&self, _x: &DVector<f64>, y: &DVector<f64>, _xi: &[f64], _eta: &[f64]) -> DVector<f64> {
        -(self.a.transpose() * y)
    }

    fn grad_g_y(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DVector<f64> {
        &self.q * y - self.rhs(x, xi, eta)
    }

    fn hess_g_yy(&self, _x: &DVector<f64>, _y: &DVector<f64>, _xi: &[f64], _eta: &[f64]) -> DMatrix<f64> {
        self.q.clone()
    }

    fn hess_g_xy(&self, _x: &DVector<f64>, _y: &DVector<f64>, _xi: &[f64], _eta: &[f64]) -> DMatrix<f64> {
        -self.a.transpose()
    }

    fn conditional_eta(&self, xi: &[f64]) -> Vec<(f64, Vec<f64>)> {
        // g is affine in η, so the conditional mean is an exact quadrature
        vec![(1.0, self.noise_mean(xi).as_slice().to_vec())]
    }

    fn exact_lower_solution(&self, x: &DVector<f64>, xi: &[f64]) -> Option<DVector<f64>> {
        Some(&self.q_inv * (&self.a * x + self.forcing(xi) + self.noise_mean(xi)))
    }

    fn lower_hessian_bound(&self) -> Option<f64> {
        Some(self.lambda_max)
    }

    fn random_probe(&self, rng: &mut StreamRng) -> Probe {
        let dims = self.dims();
        let x = DVector::from_fn(dims.d_x, |_, _| uniform(rng, -2.0, 2.0));
        let y = DVector::from_fn(dims.d_y, |_, _| uniform(rng, -2.0, 2.0));
        let xi = uniform(rng, -1.0, 1.0);
        let eta = (0..dims.d_y)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                self.params.rho_m * xi + self.params.sigma * z
            })
            .collect();
        Probe {
            x,
            y,
            sample: JointSample { xi: vec![xi], eta },
        }
    }

    /// Exact `μ`, `L_g1` (norm of the joint Hessian of `g`), `L_g2 = 0` and
    /// `L_f1`; `L_f0` is the largest `‖∇f‖` over the probe region.
    fn regularity_constants(&self) -> Result<RegularityConstants> {
        let dims = self.dims();
        let n = dims.d_x + dims.d_y;
        let joint = DMatrix::from_fn(n, n, |r, c| match (r < dims.d_x, c < dims.d_x) {
            (true, true) => 0.0,
            (true, false) => -self.a[(c - dims.d_x, r)],
            (false, true) => -self.a[(r - dims.d_x, c)],
            (false, false) => self.q[(r - dims.d_x, c - dims.d_x)],
        });
        let l_g1 = spectral_norm(&joint);
        let l_f1 = self.params.lambda_x.max(1.0);
        let mut rng = rng::stream(0, rng::streams::PROBES);
        let probes = 200;
        let l_f0 = (0..probes)
            .map(|_| {
                let p = self.random_probe(&mut rng);
                let gx = self.grad_f_x(&p.x, &p.y, &p.sample.xi, &p.sample.eta);
                let gy = self.grad_f_y(&p.x, &p.y, &p.sample.xi, &p.sample.eta);
                libm::sqrt(gx.norm_squared() + gy.norm_squared())
            })
            .fold(0.0, f64::max);
        let mut rc = RegularityConstants::new(l_f0, l_f1, l_g1, 0.0, self.mu)?;
        rc.exact = false;
        rc.probes = probes;
        Ok(rc)
    }
}
