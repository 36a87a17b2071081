//! Inverse capacity estimation on a two-edge, one-OD network.
//!
//! Lower level (penalized Beckmann potential):
//! `g = Σ_e t0_e (y_e + α (y_e⁺)^{β+1} / ((β+1) x_e^β))
//!      + λ_d ((ξ − Σ y_e)⁺)² + λ_+ Σ (y_e⁻)² + (μ₀/2)‖y‖²`,
//! whose `y`-gradient is the BPR travel time `t0_e (1 + α (y_e⁺/x_e)^β)` plus
//! penalty terms. Upper level: smoothed distance `√(‖y − η‖² + δ²)` between
//! the equilibrium flow and the observed flow.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use super::{uniform, CsboProblem, Dims, JointSample, Probe};
use crate::basis::DomainBox;
use crate::error::{Error, Result};
use crate::linalg::minimize_strongly_convex;
use crate::rng::{self, StreamRng};

const EDGES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_demand: f64,
    pub lambda_plus: f64,
    /// Ridge `μ₀` restoring uniform strong convexity.
    pub ridge: f64,
    /// Smoothing `δ` of the upper-level norm.
    pub delta: f64,
    /// Standard deviation `σ₀` of the flow observation noise.
    pub sigma0: f64,
    /// Lower bound kept on capacities during optimization.
    pub capacity_floor: f64,
    /// Gradient tolerance of the lower-level solves used to generate data.
    pub solve_tol: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 4.0,
            lambda_demand: 100.0,
            lambda_plus: 50.0,
            ridge: 1e-6,
            delta: 1e-8,
            sigma0: 0.05,
            capacity_floor: 0.05,
            solve_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrafficProblem {
    params: TrafficParams,
    free_flow: DVector<f64>,
    x_star: DVector<f64>,
    domain: DomainBox,
}

/// Draws free-flow times in `[1, 2]²` and true capacities in `[0.2, 0.8]²`.
pub fn build_traffic(seed: u64) -> Result<TrafficProblem> {
    TrafficProblem::new(seed, TrafficParams::default())
}

fn pos(v: f64) -> f64 {
    v.max(0.0)
}

fn neg(v: f64) -> f64 {
    (-v).max(0.0)
}

impl TrafficProblem {
    pub fn new(seed: u64, params: TrafficParams) -> Result<Self> {
        if !(params.sigma0 >= 0.0) || !(params.ridge > 0.0) || !(params.delta > 0.0) {
            return Err(Error::InvalidArgument(
                "traffic parameters need σ₀ ≥ 0 and positive ridge and smoothing".into(),
            ));
        }
        let mut rng = rng::stream(seed, rng::streams::PROBLEM);
        let free_flow = DVector::from_fn(EDGES, |_, _| uniform(&mut rng, 1.0, 2.0));
        let x_star = DVector::from_fn(EDGES, |_, _| uniform(&mut rng, 0.2, 0.8));
        Ok(Self {
            params,
            free_flow,
            x_star,
            domain: DomainBox::interval(0.0, 1.0)?,
        })
    }

    pub fn params(&self) -> &TrafficParams {
        &self.params
    }

    pub fn free_flow(&self) -> &DVector<f64> {
        &self.free_flow
    }

    /// Edge travel time `t_e(y_e; x) = t0_e (1 + α (y_e⁺/x_e)^β)`.
    pub fn travel_time(&self, e: usize, flow: f64, capacity: f64) -> f64 {
        let p = &self.params;
        self.free_flow[e] * (1.0 + p.alpha * libm::pow(pos(flow) / capacity, p.beta))
    }

    /// Equilibrium flow `y⋆(x, ξ)` to the configured tolerance.
    pub fn equilibrium(&self, x: &DVector<f64>, xi: f64) -> Result<DVector<f64>> {
        let ctx = [xi];
        minimize_strongly_convex(
            |y| self.g_value(x, y, &ctx, &[]),
            |y| self.grad_g_y(x, y, &ctx, &[]),
            |y| self.hess_g_yy(x, y, &ctx, &[]),
            DVector::from_element(EDGES, 0.5 * xi),
            self.params.solve_tol,
            10_000,
        )
    }

    fn shortfall(&self, y: &DVector<f64>, xi: &[f64]) -> f64 {
        xi[0] - y.sum()
    }
}

impl CsboProblem for TrafficProblem {
    fn name(&self) -> &'static str {
        "traffic"
    }

    fn dims(&self) -> Dims {
        Dims {
            d_x: EDGES,
            d_y: EDGES,
            d_xi: 1,
            d_eta: EDGES,
        }
    }

    fn domain(&self) -> &DomainBox {
        &self.domain
    }

    /// Demand `ξ ~ U[0, 1]`; observation `η = y⋆(x⋆, ξ) + ε`, with `ε`
    /// redrawn until `η ≥ 0`.
    fn sample_joint(&self, n: usize, seed: u64) -> Result<Vec<JointSample>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        let mut rng = rng::stream(seed, rng::streams::TRAIN);
        let noise = Normal::new(0.0, self.params.sigma0)
            .map_err(|_| Error::InvalidArgument("invalid noise scale".into()))?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let xi = uniform(&mut rng, 0.0, 1.0);
            let y = self.equilibrium(&self.x_star, xi)?;
            let eta = loop {
                let cand: Vec<f64> = y.iter().map(|v| v + noise.sample(&mut rng)).collect();
                if cand.iter().all(|v| *v >= 0.0) {
                    break cand;
                }
            };
            out.push(JointSample { xi: vec![xi], eta });
        }
        Ok(out)
    }

    fn f_value(&self, _x: &DVector<f64>, y: &DVector<f64>, _xi: &[f64], eta: &[f64]) -> f64 {
        let r = y - DVector::from_column_slice(eta);
        libm::sqrt(r.norm_squared() + self.params.delta * self.params.delta)
    }

    fn grad_f_x(&self, _x: &DVector<f64>, _y: &DVector<f64>, _xi: &[f64], _eta: &[f64]) -> DVector<f64> {
        DVector::zeros(EDGES)
    }

    fn grad_f_y(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DVector<f64> {
        let r = y - DVector::from_column_slice(eta);
        r / self.f_value(x, y, xi, eta)
    }

    fn g_value(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], _eta: &[f64]) -> f64 {
        let p = &self.params;
        let mut v = 0.0;
        for e in 0..EDGES {
            let yp = pos(y[e]);
            v += self.free_flow[e]
                * (y[e] + p.alpha * libm::pow(yp, p.beta + 1.0) / ((p.beta + 1.0) * libm::pow(x[e], p.beta)));
            v += p.lambda_plus * neg(y[e]) * neg(y[e]);
        }
        let s = pos(self.shortfall(y, xi));
        v + p.lambda_demand * s * s + 0.5 * p.ridge * y.norm_squared()
    }

    fn grad_g_x(&self, x: &DVector<f64>, y: &DVector<f64>, _xi: &[f64], _eta: &[f64]) -> DVector<f64> {
        let p = &self.params;
        DVector::from_fn(EDGES, |e, _| {
            -self.free_flow[e] * p.alpha * p.beta / (p.beta + 1.0)
                * libm::pow(pos(y[e]), p.beta + 1.0)
                / libm::pow(x[e], p.beta + 1.0)
        })
    }

    fn grad_g_y(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], _eta: &[f64]) -> DVector<f64> {
        let p = &self.params;
        let s = pos(self.shortfall(y, xi));
        DVector::from_fn(EDGES, |e, _| {
            self.travel_time(e, y[e], x[e]) - 2.0 * p.lambda_demand * s - 2.0 * p.lambda_plus * neg(y[e])
                + p.ridge * y[e]
        })
    }

    fn hess_g_yy(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], _eta: &[f64]) -> DMatrix<f64> {
        let p = &self.params;
        let demand = if self.shortfall(y, xi) > 0.0 {
            2.0 * p.lambda_demand
        } else {
            0.0
        };
        DMatrix::from_fn(EDGES, EDGES, |i, j| {
            let mut h = demand;
            if i == j {
                h += self.free_flow[i] * p.alpha * p.beta * libm::pow(pos(y[i]), p.beta - 1.0)
                    / libm::pow(x[i], p.beta);
                if y[i] < 0.0 {
                    h += 2.0 * p.lambda_plus;
                }
                h += p.ridge;
            }
            h
        })
    }

    fn hess_g_xy(&self, x: &DVector<f64>, y: &DVector<f64>, _xi: &[f64], _eta: &[f64]) -> DMatrix<f64> {
        let p = &self.params;
        DMatrix::from_fn(EDGES, EDGES, |i, j| {
            if i == j {
                -self.free_flow[i] * p.alpha * p.beta * libm::pow(pos(y[i]), p.beta)
                    / libm::pow(x[i], p.beta + 1.0)
            } else {
                0.0
            }
        })
    }

    fn conditional_eta(&self, _xi: &[f64]) -> Vec<(f64, Vec<f64>)> {
        // g does not depend on the observation
        vec![(1.0, vec![0.0; EDGES])]
    }

    fn ground_truth_x(&self) -> Option<DVector<f64>> {
        Some(self.x_star.clone())
    }

    fn initial_x(&self) -> DVector<f64> {
        DVector::from_element(EDGES, 0.5)
    }

    fn project_x(&self, x: &mut DVector<f64>) {
        let floor = self.params.capacity_floor;
        x.iter_mut().for_each(|v| *v = v.max(floor));
    }

    fn random_probe(&self, rng: &mut StreamRng) -> Probe {
        let x = DVector::from_fn(EDGES, |_, _| uniform(rng, 0.2, 0.8));
        let y = DVector::from_fn(EDGES, |_, _| uniform(rng, -0.2, 1.2));
        let xi = uniform(rng, 0.0, 1.0);
        let eta = (0..EDGES).map(|_| uniform(rng, 0.0, 1.0)).collect();
        Probe {
            x,
            y,
            sample: JointSample { xi: vec![xi], eta },
        }
    }
}
