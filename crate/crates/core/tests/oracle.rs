mod common;

use common::rel_err;
use csbo_core::basis::{build_chebyshev, build_indicator, DomainBox};
use csbo_core::oracle::{
    exact_hypergradient, exact_reduced_hypergradient, finite_diff_gradient, least_squares_w, lower_solutions,
    mean_residual, quadratic_gradient, quadratic_reduced_gradient, quadratic_reduced_solution,
    hypergradient_gap_check, reduced_solution_check, solve_lower_exact, solve_reduced_lower_exact,
    stationarity_check, upper_value,
};
use csbo_core::problem::{build_quadratic, build_traffic, CsboProblem, Dims, JointSample, Probe, QuadraticProblem};
use csbo_core::reduction::ReducedSbo;
use csbo_core::rng::StreamRng;
use csbo_core::Result;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

/// Hides the closed-form solution so the Newton path is exercised.
struct Opaque(QuadraticProblem);

impl CsboProblem for Opaque {
    fn name(&self) -> &'static str {
        "opaque"
    }
    fn dims(&self) -> Dims {
        self.0.dims()
    }
    fn domain(&self) -> &DomainBox {
        self.0.domain()
    }
    fn sample_joint(&self, n: usize, seed: u64) -> Result<Vec<JointSample>> {
        self.0.sample_joint(n, seed)
    }
    fn f_value(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> f64 {
        self.0.f_value(x, y, xi, eta)
    }
    fn grad_f_x(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DVector<f64> {
        self.0.grad_f_x(x, y, xi, eta)
    }
    fn grad_f_y(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DVector<f64> {
        self.0.grad_f_y(x, y, xi, eta)
    }
    fn g_value(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> f64 {
        self.0.g_value(x, y, xi, eta)
    }
    fn grad_g_x(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DVector<f64> {
        self.0.grad_g_x(x, y, xi, eta)
    }
    fn grad_g_y(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DVector<f64> {
        self.0.grad_g_y(x, y, xi, eta)
    }
    fn hess_g_yy(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DMatrix<f64> {
        self.0.hess_g_yy(x, y, xi, eta)
    }
    fn hess_g_xy(&self, x: &DVector<f64>, y: &DVector<f64>, xi: &[f64], eta: &[f64]) -> DMatrix<f64> {
        self.0.hess_g_xy(x, y, xi, eta)
    }
    fn conditional_eta(&self, xi: &[f64]) -> Vec<(f64, Vec<f64>)> {
        self.0.conditional_eta(xi)
    }
    fn random_probe(&self, rng: &mut StreamRng) -> Probe {
        self.0.random_probe(rng)
    }
}

fn random_x(d: usize, rng: &mut rand_chacha::ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn newton_matches_closed_form() {
    let p = build_quadratic(3, 4, 2).unwrap();
    let opaque = Opaque(p.clone());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let x = random_x(3, &mut rng);
        let xi = [rng.random_range(-1.0..1.0)];
        let exact = p.exact_lower_solution(&x, &xi).unwrap();
        let newton = solve_lower_exact(&opaque, &x, &xi, 1e-12).unwrap();
        assert!(rel_err(&newton, &exact) <= 1e-10);
    }
}

#[test]
fn traffic_zero_demand_stays_near_origin() {
    let p = build_traffic(0).unwrap();
    let x = DVector::from_vec(vec![0.5, 0.5]);
    let y = solve_lower_exact(&p, &x, &[0.0], 1e-10).unwrap();
    // only the free-flow term pushes against the negative-part penalty
    assert!(y.norm() <= 1.0 / 50.0, "‖y⋆‖ = {}", y.norm());
}

#[test]
fn traffic_solution_is_stationary() {
    let p = build_traffic(1).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let x = DVector::from_fn(2, |_, _| rng.random_range(0.2..0.8));
        let xi = [rng.random_range(0.0..1.0)];
        let y = solve_lower_exact(&p, &x, &xi, 1e-10).unwrap();
        let g: DVector<f64> = p
            .conditional_eta(&xi)
            .iter()
            .fold(DVector::zeros(2), |a, (w, e)| a + p.grad_g_y(&x, &y, &xi, e) * *w);
        assert!(g.norm() <= 1e-10, "‖∇G‖ = {}", g.norm());
    }
}

fn check_hypergradient_by_fd<P: CsboProblem>(p: &P, draw_x: impl Fn(&mut rand_chacha::ChaCha8Rng) -> DVector<f64>) {
    let data = p.sample_joint(40, 7).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let x = draw_x(&mut rng);
        let analytic = exact_hypergradient(p, &x, &data, 1e-11).unwrap();
        let fd = finite_diff_gradient(|v| upper_value(p, v, &data, 1e-11).unwrap(), &x, 1e-5).unwrap();
        assert!(rel_err(&analytic, &fd) <= 1e-3, "{} vs {}", analytic, fd);
    }
}

#[test]
fn hypergradient_matches_finite_differences_quadratic() {
    let p = build_quadratic(3, 3, 4).unwrap();
    check_hypergradient_by_fd(&p, |r| random_x(3, r));
    let data = p.sample_joint(40, 7).unwrap();
    let x = DVector::from_vec(vec![0.1, 0.2, -0.3]);
    let a = exact_hypergradient(&p, &x, &data, 1e-12).unwrap();
    let b = quadratic_gradient(&p, &x, &data).unwrap();
    assert!(rel_err(&a, &b) <= 1e-10);
}

#[test]
fn hypergradient_matches_finite_differences_traffic() {
    let p = build_traffic(2).unwrap();
    check_hypergradient_by_fd(&p, |r| DVector::from_fn(2, |_, _| r.random_range(0.2..0.8)));
}

#[test]
fn constant_basis_solution_is_single_column() {
    let p = build_quadratic(2, 3, 5).unwrap();
    let map = build_chebyshev(1, 1, p.domain().clone()).unwrap();
    let opaque = Opaque(p.clone());
    let red = ReducedSbo::new(&opaque, &map).unwrap();
    let data = p.sample_joint(100, 1).unwrap();
    let x = DVector::from_vec(vec![0.3, -0.4]);
    let w = solve_reduced_lower_exact(&red, &x, &data, 1e-12).unwrap();
    // Φ = 1: the column is Q⁻¹ times the sample mean of the right-hand side
    let mean = data
        .iter()
        .fold(DVector::zeros(3), |a, s| a + p.a() * &x + p.forcing(&s.xi) + p.noise_mean(&s.xi))
        / 100.0;
    assert!(rel_err(&w.column(0).into_owned(), &(p.q_inv() * mean)) <= 1e-10);
    let closed = quadratic_reduced_solution(&p, &map, &x, &data).unwrap();
    assert!((&w - closed).amax() <= 1e-10);
}

#[test]
fn reduced_gradient_matches_closed_form_and_fd() {
    let p = build_quadratic(3, 2, 6).unwrap();
    let opaque = Opaque(p.clone());
    let map = build_chebyshev(1, 4, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(&opaque, &map).unwrap();
    let data = p.sample_joint(200, 2).unwrap();
    let x = DVector::from_vec(vec![0.5, -0.2, 0.1]);
    let r = exact_reduced_hypergradient(&red, &x, &data, 1e-12).unwrap();
    let closed = quadratic_reduced_gradient(&p, &map, &x, &data).unwrap();
    assert!(rel_err(&r.gradient, &closed) <= 1e-8);
    let fd = finite_diff_gradient(
        |v| exact_reduced_hypergradient(&red, v, &data, 1e-12).unwrap().value,
        &x,
        1e-5,
    )
    .unwrap();
    assert!(rel_err(&r.gradient, &fd) <= 1e-6);
}

#[test]
fn residual_non_increasing_in_feature_count() {
    let p = build_quadratic(2, 3, 9).unwrap();
    let data = p.sample_joint(500, 4).unwrap();
    let x = DVector::from_vec(vec![0.2, 0.7]);
    let ystar = lower_solutions(&p, &x, &data, 1e-12).unwrap();
    let mut prev = f64::INFINITY;
    for n in 1..=10 {
        let map = build_chebyshev(1, n, p.domain().clone()).unwrap();
        let w = least_squares_w(&map, &data, &ystar).unwrap();
        let r = mean_residual(&map, &w, &data, &ystar, 2).unwrap();
        assert!(r <= prev * (1.0 + 1e-9) + 1e-24, "N={n}: {r} > {prev}");
        prev = r;
    }
}

#[test]
fn chebyshev_residual_decays_geometrically() {
    let p = build_quadratic(2, 2, 3).unwrap();
    let data = p.sample_joint(2000, 5).unwrap();
    let x = DVector::from_vec(vec![-0.4, 0.6]);
    let ystar = lower_solutions(&p, &x, &data, 1e-12).unwrap();
    let res: Vec<f64> = (1..=14)
        .map(|n| {
            let map = build_chebyshev(1, n, p.domain().clone()).unwrap();
            mean_residual(&map, &least_squares_w(&map, &data, &ystar).unwrap(), &data, &ystar, 2).unwrap()
        })
        .collect();
    for n in 0..res.len() - 2 {
        if res[n] > 1e-20 {
            assert!(res[n + 2] <= 0.5 * res[n], "N={}: {} vs {}", n + 1, res[n + 2], res[n]);
        }
    }
}

#[test]
fn gap_and_solution_bounds_hold_on_quadratic() {
    for seed in 0..4 {
        let p = build_quadratic(3, 3, seed).unwrap();
        let constants = p.regularity_constants().unwrap();
        let data = p.sample_joint(300, seed).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.3, 0.5]);
        for n in [1, 2, 4, 8] {
            let map = build_chebyshev(1, n, p.domain().clone()).unwrap();
            let red = ReducedSbo::new(&p, &map).unwrap();
            let gap = hypergradient_gap_check(&red, &x, &data, &constants, 1e-12).unwrap();
            assert!(gap.holds(), "seed {seed} N={n}: {gap:?}");
            let sol = reduced_solution_check(&red, &x, &data, &constants, 1e-12).unwrap();
            assert!(sol.lhs <= sol.rhs * (1.0 + 1e-9) + 1e-20, "seed {seed} N={n}: {sol:?}");
            let st = stationarity_check(&red, &x, &data, &constants, 1e-12).unwrap();
            assert!(st.bound.holds(), "seed {seed} N={n}: {st:?}");
        }
    }
}

#[test]
fn gap_bound_holds_with_indicator_features() {
    let p = build_quadratic(2, 2, 1).unwrap();
    let constants = p.regularity_constants().unwrap();
    let data = p.sample_joint(300, 1).unwrap();
    let x = DVector::from_vec(vec![0.1, 0.9]);
    let map = build_indicator(4, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(&p, &map).unwrap();
    assert!(hypergradient_gap_check(&red, &x, &data, &constants, 1e-12).unwrap().holds());
}
