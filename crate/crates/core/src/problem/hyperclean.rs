//! Data hyper-cleaning with a temperature-scaled linear classifier.
//!
//! Each training example `j` carries an upper weight `σ(x_j)`. With classifier
//! `y ∈ R^{C×d}` (row-major) and temperature `ξ`,
//! `g = σ(x_j) L(y X_j / ξ, Y_j) + λ‖y‖²` for a training draw `j`, and
//! `f = L(y X_v / ξ, Y_v)` for a validation draw `v`. The noise `η` encodes the
//! pair `[j, v]` as reals.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{estimate_regularity, uniform, CsboProblem, Dims, JointSample, Probe, RegularityConstants};
use crate::basis::DomainBox;
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypercleanParams {
    pub n_train: usize,
    pub n_val: usize,
    /// Raw feature count; a constant bias feature is appended.
    pub n_features: usize,
    pub n_classes: usize,
    pub p_corrupt: f64,
    pub lambda: f64,
    /// Distance scale between blob centres.
    pub separation: f64,
    pub xi_low: f64,
    pub xi_high: f64,
}

impl Default for HypercleanParams {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_val: 200,
            n_features: 10,
            n_classes: 4,
            p_corrupt: 0.3,
            lambda: 1e-3,
            separation: 1.5,
            xi_low: 0.1,
            xi_high: 10.0,
        }
    }
}

/// A labelled feature matrix, one example per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledData {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl LabelledData {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::EmptySamples("labelled data"));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct HypercleanProblem {
    params: HypercleanParams,
    /// Training rows with bias, scaled so every row has norm at most √2.
    x_train: DMatrix<f64>,
    y_train: Vec<usize>,
    /// Which training labels were flipped.
    corrupted: Vec<bool>,
    x_val: DMatrix<f64>,
    y_val: Vec<usize>,
    domain: DomainBox,
}

/// Synthetic Gaussian-blob instance.
pub fn build_hyperclean(
    n_train: usize,
    n_val: usize,
    n_features: usize,
    n_classes: usize,
    p_corrupt: f64,
    seed: u64,
) -> Result<HypercleanProblem> {
    HypercleanProblem::synthetic(
        HypercleanParams {
            n_train,
            n_val,
            n_features,
            n_classes,
            p_corrupt,
            ..HypercleanParams::default()
        },
        seed,
    )
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + libm::exp(-t))
    } else {
        let e = libm::exp(t);
        e / (1.0 + e)
    }
}

/// Softmax probabilities and `logsumexp` of `z`.
fn softmax(z: &DVector<f64>) -> (DVector<f64>, f64) {
    let m = z.max();
    let mut p = z.map(|v| libm::exp(v - m));
    let s = p.sum();
    p /= s;
    (p, m + libm::log(s))
}

fn validate(params: &HypercleanParams) -> Result<()> {
    if params.n_train == 0 || params.n_val == 0 || params.n_features == 0 || params.n_classes < 2 {
        return Err(Error::InvalidArgument(
            "hyper-cleaning needs examples, features and at least two classes".into(),
        ));
    }
    if !(0.0..1.0).contains(&params.p_corrupt) {
        return Err(Error::InvalidArgument(alloc::format!(
            "corruption probability {} outside [0, 1)",
            params.p_corrupt
        )));
    }
    if !(params.lambda > 0.0) || !(params.xi_low > 0.0 && params.xi_high > params.xi_low) {
        return Err(Error::InvalidArgument(
            "need λ > 0 and 0 < ξ_low < ξ_high".into(),
        ));
    }
    Ok(())
}

impl HypercleanProblem {
    pub fn synthetic(params: HypercleanParams, seed: u64) -> Result<Self> {
        validate(&params)?;
        let mut rng = rng::stream(seed, rng::streams::PROBLEM);
        let (c, d) = (params.n_classes, params.n_features);
        let centres = DMatrix::from_fn(c, d, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            params.separation * z
        });
        let draw = |n: usize, rng: &mut StreamRng| {
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let feats = DMatrix::from_fn(n, d, |i, k| {
                let z: f64 = StandardNormal.sample(rng);
                centres[(labels[i], k)] + z
            });
            LabelledData { features: feats, labels }
        };
        let train = draw(params.n_train, &mut rng);
        let val = draw(params.n_val, &mut rng);
        Self::assemble(params, train, val, &mut rng)
    }

    /// Instance over external data. Training labels are corrupted with
    /// probability `p_corrupt`; validation labels are kept.
    pub fn from_dataset(
        train: LabelledData,
        val: LabelledData,
        mut params: HypercleanParams,
        seed: u64,
    ) -> Result<Self> {
        if train.features.ncols() != val.features.ncols() {
            return Err(Error::DimensionMismatch {
                what: "validation feature columns",
                expected: train.features.ncols(),
                got: val.features.ncols(),
            });
        }
        params.n_train = train.len();
        params.n_val = val.len();
        params.n_features = train.features.ncols();
        let top = train.labels.iter().chain(&val.labels).max().copied().unwrap_or(0);
        params.n_classes = params.n_classes.max(top + 1);
        validate(&params)?;
        let mut rng = rng::stream(seed, rng::streams::PROBLEM);
        Self::assemble(params, train, val, &mut rng)
    }

    fn assemble(
        params: HypercleanParams,
        train: LabelledData,
        val: LabelledData,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let scale = train
            .features
            .row_iter()
            .chain(val.features.row_iter())
            .map(|r| r.norm())
            .fold(0.0f64, f64::max);
        if !scale.is_finite() {
            return Err(Error::NonFinite("hyper-cleaning features"));
        }
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let with_bias = |m: &DMatrix<f64>| {
            DMatrix::from_fn(m.nrows(), m.ncols() + 1, |i, k| {
                if k < m.ncols() {
                    m[(i, k)] / scale
                } else {
                    1.0
                }
            })
        };
        let c = params.n_classes;
        let mut y_train = train.labels.clone();
        let mut corrupted = vec![false; y_train.len()];
        for (label, flag) in y_train.iter_mut().zip(corrupted.iter_mut()) {
            if rng.random::<f64>() < params.p_corrupt {
                *label = rng.random_range(0..c);
                *flag = true;
            }
        }
        Ok(Self {
            params,
            x_train: with_bias(&train.features),
            y_train,
            corrupted,
            x_val: with_bias(&val.features),
            y_val: val.labels,
            domain: DomainBox::interval(params.xi_low, params.xi_high)?,
        })
    }

    pub fn params(&self) -> &HypercleanParams {
        &self.params
    }

    /// Columns of a feature row including the bias feature.
    pub fn feature_dim(&self) -> usize {
        self.x_train.ncols()
    }

    pub fn corrupted(&self) -> &[bool] {
        &self.corrupted
    }

    pub fn train_labels(&self) -> &[usize] {
        &self.y_train
    }

    fn index(&self, v: f64, n: usize) -> usize {
        // η carries exact small integers
        let i = v as usize;
        assert!(i < n && (i as f64) == v, "η index {v} outside 0..{n}");
        i
    }

    fn logits(&self, y: &DVector<f64>, row: nalgebra::DMatrixView<'_, f64>, xi: f64) -> DVector<f64> {
        let (c, d) = (self.params.n_classes, self.feature_dim());
        DVector::from_fn(c, |a, _| {
            (0..d).map(|k| y[a * d + k] * row[(0, k)]).sum::<f64>() / xi
        })
    }

    fn train_row(&self, j: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.x_train.view((j, 0), (1, self.feature_dim()))
    }

    fn val_row(&self, v: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.x_val.view((v, 0), (1, self.feature_dim()))
    }

    /// `(p − e_label) ⊗ row / ξ`, the gradient of the loss in `y`.
    fn loss_grad(&self, p: &DVector<f64>, label: usize, row: nalgebra::DMatrixView<'_, f64>, xi: f64) -> DVector<f64> {
        let d = self.feature_dim();
        DVector::from_fn(p.len() * d, |i, _| {
            let (a, k) = (i / d, i % d);
            let r = if a == label { p[a] - 1.0 } else { p[a] };
            r * row[(0, k)] / xi
        })
    }

    /// Classification accuracy of `y` on the validation set at temperature `ξ`.
    pub fn validation_accuracy(&self, y: &DVector<f64>, xi: f64) -> f64 {
        let hits = (0..self.params.n_val)
            .filter(|&v| self.logits(y, self.val_row(v), xi).imax() == self.y_val[v])
            .count();
        hits as f64 / self.params.n_val as f64
    }
}

impl CsboProblem for HypercleanProblem {
    fn name(&self) -> &'static str {
        "hyperclean"
    }

    fn dims(&self) -> Dims {
        Dims {
            d_x: self.params.n_train,
            d_y: self.params.n_classes * self.feature_dim(),
            d_xi: 1,
            d_eta: 2,
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
        Ok((0..n)
            .map(|_| {
                let xi = uniform(&mut rng, self.params.xi_low, self.params.xi_high);
                let j = rng.random_range(0..self.params.n_train);
                let v = rng.random_range(0..self.params.n_val);
                JointSample {
                    xi: vec![xi],
                    eta: vec![j as f64, v as f64],
                }
            })
            .collect())
    }

    fn f_value(&self, _x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> f64 {
        let v = self.index(eta[1], self.params.n_val);
        let z = self.logits(y, self.val_row(v), xi[0]);
        softmax(&z).1 - z[self.y_val[v]]
    }

    fn grad_f_x(&self, _x: &DVector<f64>, _y: &DVector<f64>, _xi: &[f64], _eta: &[f64]) -> DVector<f64> {
        DVector::zeros(self.params.n_train)
    }

    fn grad_f_y(&self, _x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DVector<f64> {
        let v = self.index(eta[1], self.params.n_val);
        let (p, _) = softmax(&self.logits(y, self.val_row(v), xi[0]));
        self.loss_grad(&p, self.y_val[v], self.val_row(v), xi[0])
    }

    fn g_value(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> f64 {
        let j = self.index(eta[0], self.params.n_train);
        let z = self.logits(y, self.train_row(j), xi[0]);
        sigmoid(x[j]) * (softmax(&z).1 - z[self.y_train[j]]) + self.params.lambda * y.norm_squared()
    }

    fn grad_g_x(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DVector<f64> {
        let j = self.index(eta[0], self.params.n_train);
        let z = self.logits(y, self.train_row(j), xi[0]);
        let s = sigmoid(x[j]);
        let mut out = DVector::zeros(self.params.n_train);
        out[j] = s * (1.0 - s) * (softmax(&z).1 - z[self.y_train[j]]);
        out
    }

    fn grad_g_y(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DVector<f64> {
        let j = self.index(eta[0], self.params.n_train);
        let (p, _) = softmax(&self.logits(y, self.train_row(j), xi[0]));
        self.loss_grad(&p, self.y_train[j], self.train_row(j), xi[0]) * sigmoid(x[j])
            + y * (2.0 * self.params.lambda)
    }

    fn hess_g_yy(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DMatrix<f64> {
        let j = self.index(eta[0], self.params.n_train);
        let (p, _) = softmax(&self.logits(y, self.train_row(j), xi[0]));
        let row = self.train_row(j);
        let d = self.feature_dim();
        let w = sigmoid(x[j]) / (xi[0] * xi[0]);
        let n = self.dims().d_y;
        DMatrix::from_fn(n, n, |r, c| {
            let (a, k) = (r / d, r % d);
            let (b, l) = (c / d, c % d);
            let curv = if a == b { p[a] - p[a] * p[b] } else { -p[a] * p[b] };
            let ridge = if r == c { 2.0 * self.params.lambda } else { 0.0 };
            w * curv * row[(0, k)] * row[(0, l)] + ridge
        })
    }

    fn hess_g_xy(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DMatrix<f64> {
        let j = self.index(eta[0], self.params.n_train);
        let (p, _) = softmax(&self.logits(y, self.train_row(j), xi[0]));
        let s = sigmoid(x[j]);
        let gy = self.loss_grad(&p, self.y_train[j], self.train_row(j), xi[0]) * (s * (1.0 - s));
        let mut out = DMatrix::zeros(self.params.n_train, gy.len());
        out.row_mut(j).copy_from(&gy.transpose());
        out
    }

    fn hess_g_yy_apply(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        xi: &[f64],
        eta: &[f64],
        v: &DVector<f64>,
    ) -> DVector<f64> {
        let j = self.index(eta[0], self.params.n_train);
        let row = self.train_row(j);
        let (p, _) = softmax(&self.logits(y, row, xi[0]));
        let u = self.logits(v, row, 1.0);
        let pu = p.dot(&u);
        let w = sigmoid(x[j]) / (xi[0] * xi[0]);
        let d = self.feature_dim();
        DVector::from_fn(v.len(), |i, _| {
            let (a, k) = (i / d, i % d);
            w * p[a] * (u[a] - pu) * row[(0, k)] + 2.0 * self.params.lambda * v[i]
        })
    }

    fn hess_g_xy_apply(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        xi: &[f64],
        eta: &[f64],
        v: &DVector<f64>,
    ) -> DVector<f64> {
        let j = self.index(eta[0], self.params.n_train);
        let (p, _) = softmax(&self.logits(y, self.train_row(j), xi[0]));
        let s = sigmoid(x[j]);
        let gy = self.loss_grad(&p, self.y_train[j], self.train_row(j), xi[0]);
        let mut out = DVector::zeros(self.params.n_train);
        out[j] = s * (1.0 - s) * gy.dot(v);
        out
    }

    fn conditional_eta(&self, _xi: &[f64]) -> Vec<(f64, Vec<f64>)> {
        let w = 1.0 / self.params.n_train as f64;
        (0..self.params.n_train).map(|j| (w, vec![j as f64, 0.0])).collect()
    }

    fn lower_hessian_bound(&self) -> Option<f64> {
        let row_sq = self.x_train.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max);
        let lo = self.params.xi_low;
        Some(0.5 * row_sq / (lo * lo) + 2.0 * self.params.lambda)
    }

    /// `μ = 2λ` exactly (ridge); Lipschitz constants probed.
    fn regularity_constants(&self) -> Result<RegularityConstants> {
        let probed = estimate_regularity(self, 200, 0)?;
        let mut rc = RegularityConstants::new(
            probed.l_f0,
            probed.l_f1,
            probed.l_g1,
            probed.l_g2,
            2.0 * self.params.lambda,
        )?;
        rc.exact = false;
        rc.probes = probed.probes;
        Ok(rc)
    }

    fn random_probe(&self, rng: &mut StreamRng) -> Probe {
        let d = self.dims();
        let x = DVector::from_fn(d.d_x, |_, _| uniform(rng, -2.0, 2.0));
        let y = DVector::from_fn(d.d_y, |_, _| uniform(rng, -1.0, 1.0));
        let xi = uniform(rng, self.params.xi_low, self.params.xi_high);
        let j = rng.random_range(0..self.params.n_train);
        let v = rng.random_range(0..self.params.n_val);
        Probe {
            x,
            y,
            sample: JointSample {
                xi: vec![xi],
                eta: vec![j as f64, v as f64],
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eig_extremes;

    fn small() -> HypercleanProblem {
        build_hyperclean(40, 10, 3, 3, 0.3, 7).unwrap()
    }

    #[test]
    fn zero_upper_variable_weights_are_half() {
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn zero_classifier_has_log_c_loss() {
        let p = small();
        let d = p.dims();
        let v = p.f_value(&DVector::zeros(d.d_x), &DVector::zeros(d.d_y), &[2.0], &[0.0, 3.0]);
        assert!((v - libm::log(3.0)).abs() < 1e-14);
    }

    #[test]
    fn unit_temperature_gives_plain_logits() {
        let p = small();
        let y = DVector::from_fn(p.dims().d_y, |i, _| 0.1 * i as f64);
        let z = p.logits(&y, p.val_row(2), 1.0);
        let d = p.feature_dim();
        for a in 0..3 {
            let direct: f64 = (0..d).map(|k| y[a * d + k] * p.x_val[(2, k)]).sum();
            assert_eq!(z[a], direct);
        }
    }

    #[test]
    fn lower_curvature_at_least_twice_ridge() {
        let p = small();
        let mut rng = rng::stream(0, rng::streams::PROBES);
        for _ in 0..20 {
            let pr = p.random_probe(&mut rng);
            let h = p.hess_g_yy(&pr.x, &pr.y, &pr.sample.xi, &pr.sample.eta);
            assert!(sym_eig_extremes(&h).0 >= 2e-3 - 1e-10);
        }
    }

    #[test]
    fn matrix_free_products_match_dense() {
        let p = small();
        let mut rng = rng::stream(1, rng::streams::PROBES);
        for _ in 0..10 {
            let pr = p.random_probe(&mut rng);
            let (xi, eta) = (&pr.sample.xi[..], &pr.sample.eta[..]);
            let v = DVector::from_fn(p.dims().d_y, |_, _| uniform(&mut rng, -1.0, 1.0));
            let dense = p.hess_g_yy(&pr.x, &pr.y, xi, eta) * &v;
            assert!((dense - p.hess_g_yy_apply(&pr.x, &pr.y, xi, eta, &v)).amax() < 1e-12);
            let dense = p.hess_g_xy(&pr.x, &pr.y, xi, eta) * &v;
            assert!((dense - p.hess_g_xy_apply(&pr.x, &pr.y, xi, eta, &v)).amax() < 1e-12);
        }
    }

    #[test]
    fn corruption_rate_near_nominal() {
        let p = build_hyperclean(4000, 10, 2, 5, 0.3, 2).unwrap();
        let rate = p.corrupted().iter().filter(|c| **c).count() as f64 / 4000.0;
        assert!((rate - 0.3).abs() < 0.03, "{rate}");
    }

    #[test]
    fn rejects_bad_corruption_probability() {
        assert!(build_hyperclean(10, 10, 2, 2, 1.0, 0).is_err());
    }

    #[test]
    fn temperatures_inside_range() {
        let p = small();
        for s in p.sample_joint(500, 4).unwrap() {
            assert!((0.1..=10.0).contains(&s.xi[0]));
        }
    }
}
