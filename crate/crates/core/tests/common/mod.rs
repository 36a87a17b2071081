#![allow(dead_code)]

use csbo_core::basis::DomainBox;
use csbo_core::problem::{CsboProblem, Dims, JointSample, Probe};
use csbo_core::rng::StreamRng;
use csbo_core::Result;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// `‖a − b‖ / max(‖b‖, 1)`.
pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

pub fn central_diff(f: impl Fn(&DVector<f64>) -> f64, p: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(p.len(), |i, _| {
        let mut up = p.clone();
        let mut dn = p.clone();
        up[i] += h;
        dn[i] -= h;
        (f(&up) - f(&dn)) / (2.0 * h)
    })
}

/// Jacobian of a vector field by central differences, one column per input.
pub fn central_jacobian(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    p: &DVector<f64>,
    h: f64,
) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..p.len())
        .map(|i| {
            let mut up = p.clone();
            let mut dn = p.clone();
            up[i] += h;
            dn[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect();
    DMatrix::from_columns(&cols)
}

/// `g = ½ s ‖y‖² − yᵀη + ½‖x‖²`, `f = c · (½‖y − η‖²) + ½‖x − 1‖²`.
/// Lower Hessian `s I`; upper level ignores `y` when `c = 0`.
pub struct ScaledIdentity {
    pub d: usize,
    pub scale: f64,
    pub couple: f64,
    pub domain: DomainBox,
}

impl ScaledIdentity {
    pub fn new(d: usize, scale: f64, couple: f64) -> Self {
        Self {
            d,
            scale,
            couple,
            domain: DomainBox::symmetric_unit(1).unwrap(),
        }
    }
}

impl CsboProblem for ScaledIdentity {
    fn name(&self) -> &'static str {
        "scaled-identity"
    }
    fn dims(&self) -> Dims {
        Dims {
            d_x: self.d,
            d_y: self.d,
            d_xi: 1,
            d_eta: self.d,
        }
    }
    fn domain(&self) -> &DomainBox {
        &self.domain
    }
    fn sample_joint(&self, n: usize, seed: u64) -> Result<Vec<JointSample>> {
        let mut rng = csbo_core::rng::stream(seed, csbo_core::rng::streams::TRAIN);
        Ok((0..n)
            .map(|_| JointSample {
                xi: vec![rng.random::<f64>() * 2.0 - 1.0],
                eta: (0..self.d).map(|_| rng.random::<f64>()).collect(),
            })
            .collect())
    }
    fn f_value(&self, x: &DVector<f64>, y: &DVector<f64>, _xi: &[f64], eta: &[f64]) -> f64 {
        let r = y - DVector::from_column_slice(eta);
        self.couple * 0.5 * r.norm_squared() + 0.5 * x.map(|v| v - 1.0).norm_squared()
    }
    fn grad_f_x(&self, x: &DVector<f64>, _y: &DVector<f64>, _xi: &[f64], _eta: &[f64]) -> DVector<f64> {
        x.map(|v| v - 1.0)
    }
    fn grad_f_y(&self, _x: &DVector<f64>, y: &DVector<f64>, _xi: &[f64], eta: &[f64]) -> DVector<f64> {
        (y - DVector::from_column_slice(eta)) * self.couple
    }
    fn g_value(&self, x: &DVector<f64>, y: &DVector<f64>, _xi: &[f64], eta: &[f64]) -> f64 {
        0.5 * self.scale * y.norm_squared() - y.dot(&DVector::from_column_slice(eta)) + 0.5 * x.norm_squared()
    }
    fn grad_g_x(&self, x: &DVector<f64>, _y: &DVector<f64>, _xi: &[f64], _eta: &[f64]) -> DVector<f64> {
        x.clone()
    }
    fn grad_g_y(&self, _x: &DVector<f64>, y: &DVector<f64>, _xi: &[f64], eta: &[f64]) -> DVector<f64> {
        y * self.scale - DVector::from_column_slice(eta)
    }
    fn hess_g_yy(&self, _x: &DVector<f64>, _y: &DVector<f64>, _xi: &[f64], _eta: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.d, self.d) * self.scale
    }
    fn hess_g_xy(&self, _x: &DVector<f64>, _y: &DVector<f64>, _xi: &[f64], _eta: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.d, self.d)
    }
    fn conditional_eta(&self, _xi: &[f64]) -> Vec<(f64, Vec<f64>)> {
        vec![(1.0, vec![0.5; self.d])]
    }
    fn random_probe(&self, rng: &mut StreamRng) -> Probe {
        Probe {
            x: DVector::from_fn(self.d, |_, _| rng.random::<f64>()),
            y: DVector::from_fn(self.d, |_, _| rng.random::<f64>()),
            sample: JointSample {
                xi: vec![rng.random::<f64>() * 2.0 - 1.0],
                eta: (0..self.d).map(|_| rng.random::<f64>()).collect(),
            },
        }
    }
}
