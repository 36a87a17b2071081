mod common;

use common::ScaledIdentity;
use csbo_core::basis::{build_chebyshev, build_indicator};
use csbo_core::linalg::sym_eig_extremes;
use csbo_core::oracle::{
    least_squares_w, lower_solutions, mean_residual, quadratic_reduced_gradient, quadratic_reduced_solution,
};
use csbo_core::problem::{build_quadratic, CsboProblem, JointSample, QuadraticProblem};
use csbo_core::reduction::{Context, ReducedSbo};
use csbo_core::rng::{self, StreamRng};
use csbo_core::solver::{
    hypergradient, inner_loop, run, run_partition_baseline, run_with, InverseMode, RunOptions, SolverConfig,
};
use csbo_core::Error;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

fn solver_rng() -> StreamRng {
    rng::stream(0, rng::streams::SOLVER)
}

#[test]
fn single_inner_step_on_scalar_quadratic() {
    let p = build_quadratic(1, 1, 3).unwrap();
    let map = build_chebyshev(1, 1, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(&p, &map).unwrap();
    let s = JointSample { xi: vec![0.4], eta: vec![0.25] };
    let ctx = vec![red.context(&s).unwrap()];
    let x = DVector::from_element(1, 0.7);
    let mut w = DMatrix::from_element(1, 1, 0.3);
    let cfg = SolverConfig { t_inner: 1, beta: 0.2, ..SolverConfig::default() };
    inner_loop(&red, &x, &mut w, &ctx, &cfg, &mut solver_rng()).unwrap();
    let q = p.q()[(0, 0)];
    let r = p.a()[(0, 0)] * 0.7 + p.forcing(&[0.4])[0] + 0.25;
    let expect = 0.3 - 0.2 * (q * 0.3 - r);
    assert!((w[(0, 0)] - expect).abs() <= 1e-15);
}

#[test]
fn zero_inner_steps_rejected() {
    let cfg = SolverConfig { t_inner: 0, ..SolverConfig::default() };
    assert!(cfg.validate().is_err());
}

#[test]
fn unstable_inner_step_reports_divergence() {
    let p = build_quadratic(1, 1, 3).unwrap();
    let map = build_chebyshev(1, 1, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(&p, &map).unwrap();
    let s = JointSample { xi: vec![0.4], eta: vec![0.25] };
    let ctx = vec![red.context(&s).unwrap()];
    let q = p.q()[(0, 0)];
    let cfg = SolverConfig { t_inner: 500, beta: 2.5 / q, ..SolverConfig::default() };
    let mut w = DMatrix::from_element(1, 1, 0.0);
    let err = inner_loop(&red, &DVector::zeros(1), &mut w, &ctx, &cfg, &mut solver_rng()).unwrap_err();
    match err {
        Error::Diverged { step_size, .. } => assert_eq!(step_size, 2.5 / q),
        other => panic!("unexpected {other:?}"),
    }
    // just below the threshold stays bounded
    let cfg = SolverConfig { beta: 1.9 / q, ..cfg };
    let mut w = DMatrix::from_element(1, 1, 0.0);
    inner_loop(&red, &DVector::zeros(1), &mut w, &ctx, &cfg, &mut solver_rng()).unwrap();
}

fn full_batch_inner(p: &QuadraticProblem, n: usize, x: &DVector<f64>, data: &[JointSample]) -> DMatrix<f64> {
    let map = build_chebyshev(1, n, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(p, &map).unwrap();
    let ctx = red.contexts(data).unwrap();
    let gram = ctx.iter().fold(DMatrix::zeros(n, n), |a, c| a + &c.phi * c.phi.transpose()) / ctx.len() as f64;
    let lmax = sym_eig_extremes(p.q()).1 * sym_eig_extremes(&gram).1;
    let cfg = SolverConfig { t_inner: 3000, beta: 1.0 / lmax, batch: data.len(), ..SolverConfig::default() };
    let mut w = red.zero_w();
    inner_loop(&red, x, &mut w, &ctx, &cfg, &mut solver_rng()).unwrap();
    w
}

#[test]
fn inner_loop_reaches_least_squares_floor() {
    let p = build_quadratic(2, 3, 5).unwrap();
    let data = p.sample_joint(400, 2).unwrap();
    let x = DVector::from_vec(vec![0.5, -0.2]);
    let map = build_chebyshev(1, 3, p.domain().clone()).unwrap();
    let ystar = lower_solutions(&p, &x, &data, 1e-12).unwrap();
    let w = full_batch_inner(&p, 3, &x, &data);
    let floor = mean_residual(&map, &least_squares_w(&map, &data, &ystar).unwrap(), &data, &ystar, 2).unwrap();
    let got = mean_residual(&map, &w, &data, &ystar, 2).unwrap();
    assert!(got <= 2.0 * floor, "mse {got} vs floor {floor}");
}

#[test]
fn runs_are_deterministic() {
    let p = build_quadratic(2, 2, 1).unwrap();
    let map = build_chebyshev(1, 3, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(&p, &map).unwrap();
    let data = p.sample_joint(100, 0).unwrap();
    let cfg = SolverConfig { epochs: 4, batch: 16, seed: 9, ..SolverConfig::default() };
    let a = run(&red, &data, &cfg).unwrap();
    let b = run(&red, &data, &cfg).unwrap();
    assert_eq!(a, b);
    let c = run(&red, &data, &SolverConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.x_final, c.x_final);
}

#[test]
fn zero_outer_step_returns_start() {
    let p = build_quadratic(3, 2, 1).unwrap();
    let map = build_chebyshev(1, 3, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(&p, &map).unwrap();
    let data = p.sample_joint(50, 0).unwrap();
    let x0 = DVector::from_vec(vec![0.3, -0.1, 0.9]);
    let cfg = SolverConfig { alpha: 0.0, epochs: 3, ..SolverConfig::default() };
    let res = run_with(&red, &data, &cfg, RunOptions { x0: Some(x0.clone()), ..RunOptions::default() }).unwrap();
    assert_eq!(res.x_final, x0);
    assert_eq!(res.x_tail_avg, x0);
}

#[test]
fn first_outer_step_descends_along_reduced_gradient() {
    let p = build_quadratic(3, 3, 2).unwrap();
    let map = build_chebyshev(1, 3, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(&p, &map).unwrap();
    let data = p.sample_joint(200, 0).unwrap();
    let x0 = DVector::from_vec(vec![0.5, -0.5, 0.2]);
    let ctx = red.contexts(&data).unwrap();
    let gram = ctx.iter().fold(DMatrix::zeros(3, 3), |a, c| a + &c.phi * c.phi.transpose()) / 200.0;
    let lmax = sym_eig_extremes(p.q()).1 * sym_eig_extremes(&gram).1;
    let phi_max = ctx.iter().map(|c| c.phi.norm_squared()).fold(0.0, f64::max);
    let cfg = SolverConfig {
        alpha: 1e-3,
        beta: 1.0 / lmax,
        t_inner: 2000,
        k_neumann: 400,
        s_neumann: 0.5 / (sym_eig_extremes(p.q()).1 * phi_max),
        batch: 200,
        epochs: 1,
        ..SolverConfig::default()
    };
    let res = run_with(&red, &data, &cfg, RunOptions { x0: Some(x0.clone()), ..RunOptions::default() }).unwrap();
    let step = &x0 - &res.x_final;
    let grad = quadratic_reduced_gradient(&p, &map, &x0, &data).unwrap();
    let cos = step.dot(&grad) / (step.norm() * grad.norm());
    assert!(cos >= 0.9, "cosine {cos}");
}

#[test]
fn exact_mode_matches_closed_form_reduced_gradient() {
    for seed in 0..5 {
        let p = build_quadratic(3, 2, seed).unwrap();
        let map = build_chebyshev(1, 4, p.domain().clone()).unwrap();
        let red = ReducedSbo::new(&p, &map).unwrap();
        let data = p.sample_joint(300, seed).unwrap();
        let ctx = red.contexts(&data).unwrap();
        let all: Vec<&Context<'_>> = ctx.iter().collect();
        let x = DVector::from_vec(vec![0.1 * seed as f64, -0.3, 0.8]);
        let w = quadratic_reduced_solution(&p, &map, &x, &data).unwrap();
        let h = hypergradient(&red, &x, &w, &all, &all, 1e-2, InverseMode::Exact).unwrap();
        let a = quadratic_reduced_gradient(&p, &map, &x, &data).unwrap();
        assert!((&h - &a).norm() <= 1e-8 * a.norm().max(1.0), "seed {seed}: {}", (&h - &a).norm());
    }
}

#[test]
fn upper_level_free_of_y_gives_direct_gradient() {
    let p = ScaledIdentity::new(2, 1.5, 0.0);
    let map = build_chebyshev(1, 3, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(&p, &map).unwrap();
    let data = p.sample_joint(10, 0).unwrap();
    let ctx = red.contexts(&data).unwrap();
    let all: Vec<_> = ctx.iter().collect();
    let x = DVector::from_vec(vec![0.2, 3.0]);
    let w = DMatrix::from_element(2, 3, 0.4);
    let h = hypergradient(&red, &x, &w, &all, &all[..3], 1e-2, InverseMode::Neumann).unwrap();
    assert!((h - x.map(|v| v - 1.0)).amax() <= 1e-14);
}

#[test]
fn repeated_sample_batch_equals_single() {
    let p = build_quadratic(2, 2, 0).unwrap();
    let map = build_chebyshev(1, 3, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(&p, &map).unwrap();
    let data = p.sample_joint(5, 0).unwrap();
    let ctx = red.contexts(&data).unwrap();
    let draws: Vec<_> = ctx.iter().collect();
    let x = DVector::from_vec(vec![0.2, 0.1]);
    let w = DMatrix::from_element(2, 3, 0.1);
    let one = hypergradient(&red, &x, &w, &[&ctx[0]], &draws, 1e-2, InverseMode::Neumann).unwrap();
    let many = hypergradient(&red, &x, &w, &[&ctx[0]; 7], &draws, 1e-2, InverseMode::Neumann).unwrap();
    assert!((one - many).amax() <= 1e-14);
}

#[test]
fn warm_started_inner_loop_does_not_increase_objective() {
    let p = build_quadratic(2, 2, 4).unwrap();
    let map = build_chebyshev(1, 4, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(&p, &map).unwrap();
    let data = p.sample_joint(500, 1).unwrap();
    let ctx = red.contexts(&data).unwrap();
    let x = DVector::from_vec(vec![0.4, 0.4]);
    let cfg = SolverConfig { t_inner: 20, beta: 0.05, batch: 16, ..SolverConfig::default() };
    let mut rng = solver_rng();
    let mut w = red.zero_w();
    let objective = |w: &DMatrix<f64>| {
        let vals: Vec<f64> = ctx.iter().map(|c| red.g_value(&x, w, c)).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64;
        (m, (var / vals.len() as f64).sqrt())
    };
    let mut prev = objective(&w);
    for _ in 0..30 {
        inner_loop(&red, &x, &mut w, &ctx, &cfg, &mut rng).unwrap();
        let cur = objective(&w);
        assert!(cur.0 <= prev.0 + 3.0 * cur.1, "{} after {}", cur.0, prev.0);
        prev = cur;
    }
}

#[test]
fn divergent_run_returns_partial_result() {
    let p = build_quadratic(2, 2, 0).unwrap();
    let map = build_chebyshev(1, 3, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(&p, &map).unwrap();
    let data = p.sample_joint(40, 0).unwrap();
    let cfg = SolverConfig { beta: 50.0, t_inner: 50, epochs: 3, ..SolverConfig::default() };
    let res = run(&red, &data, &cfg).unwrap();
    assert!(matches!(res.failure, Some(Error::Diverged { .. })));
    assert!(res.records.len() < 3);
}

#[test]
fn one_cell_partition_equals_constant_basis() {
    let p = build_quadratic(2, 3, 7).unwrap();
    let data = p.sample_joint(64, 3).unwrap();
    let cfg = SolverConfig { epochs: 3, batch: 8, seed: 4, ..SolverConfig::default() };
    let (_, part) = run_partition_baseline(&p, 1, &data, &cfg, RunOptions::default()).unwrap();
    let map = build_chebyshev(1, 1, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(&p, &map).unwrap();
    assert_eq!(part, run(&red, &data, &cfg).unwrap());
}

#[test]
fn inner_step_touches_only_own_cell() {
    let p = build_quadratic(2, 2, 1).unwrap();
    let map = build_indicator(4, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(&p, &map).unwrap();
    let s = JointSample { xi: vec![-0.3], eta: vec![0.1, 0.2] };
    let ctx = vec![red.context(&s).unwrap()];
    let cell = map.cell_of(-0.3);
    let w0 = DMatrix::from_fn(2, 4, |a, j| (a + 2 * j) as f64 * 0.1);
    let mut w = w0.clone();
    inner_loop(&red, &DVector::zeros(2), &mut w, &ctx, &SolverConfig::default(), &mut solver_rng()).unwrap();
    for j in 0..4 {
        if j == cell {
            assert_ne!(w.column(j), w0.column(j));
        } else {
            assert_eq!(w.column(j), w0.column(j));
        }
    }
}

#[test]
fn two_cell_columns_reach_cell_means() {
    let p = build_quadratic(2, 2, 8).unwrap();
    let data = p.sample_joint(600, 5).unwrap();
    let x = DVector::from_vec(vec![0.3, -0.6]);
    let map = build_indicator(2, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(&p, &map).unwrap();
    let ctx = red.contexts(&data).unwrap();
    let cfg = SolverConfig { t_inner: 2000, beta: 0.5, batch: 600, ..SolverConfig::default() };
    let mut w = red.zero_w();
    inner_loop(&red, &x, &mut w, &ctx, &cfg, &mut solver_rng()).unwrap();
    let ystar = lower_solutions(&p, &x, &data, 1e-12).unwrap();
    let floor = mean_residual(&map, &least_squares_w(&map, &data, &ystar).unwrap(), &data, &ystar, 2).unwrap();
    for cell in 0..2 {
        let members: Vec<_> = data.iter().zip(&ystar).filter(|(s, _)| map.cell_of(s.xi[0]) == cell).collect();
        let mean = members.iter().fold(DVector::zeros(2), |a, (_, y)| a + *y) / members.len() as f64;
        let gap = (w.column(cell) - mean).norm_squared();
        assert!(gap <= floor, "cell {cell}: {gap} vs floor {floor}");
    }
}

/// Direct stocBiO on a single `y`, written against the problem oracles only.
fn direct_single_y(p: &QuadraticProblem, data: &[JointSample], cfg: &SolverConfig) -> (DVector<f64>, DVector<f64>) {
    let mut rng = rng::stream(cfg.seed, rng::streams::SOLVER);
    let mut x = p.initial_x();
    let mut y = DVector::zeros(p.dims().d_y);
    let mean = |items: &[&JointSample], f: &dyn Fn(&JointSample) -> DVector<f64>| {
        let mut acc = f(items[0]);
        for s in &items[1..] {
            acc += f(s);
        }
        acc / items.len() as f64
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            for _ in 0..cfg.t_inner {
                let picks: Vec<&JointSample> = if data.len() <= cfg.batch {
                    data.iter().collect()
                } else {
                    (0..cfg.batch).map(|_| &data[rng.random_range(0..data.len())]).collect()
                };
                let g = mean(&picks, &|s| p.grad_g_y(&x, &y, &s.xi, &s.eta));
                y -= g * cfg.beta;
            }
            let batch: Vec<&JointSample> = chunk.iter().map(|&i| &data[i]).collect();
            let draws: Vec<&JointSample> =
                (0..cfg.k_neumann).map(|_| &data[rng.random_range(0..data.len())]).collect();
            let v = mean(&batch, &|s| p.grad_f_y(&x, &y, &s.xi, &s.eta));
            let mut term = v.clone();
            let mut acc = v.clone();
            for s in &draws {
                let h = p.hess_g_yy_apply(&x, &y, &s.xi, &s.eta, &term);
                term -= h * cfg.s_neumann;
                acc += &term;
            }
            let q = acc * cfg.s_neumann;
            let direct = mean(&batch, &|s| p.grad_f_x(&x, &y, &s.xi, &s.eta));
            let corr = mean(&batch, &|s| p.hess_g_xy_apply(&x, &y, &s.xi, &s.eta, &q));
            x -= (direct - corr) * cfg.alpha;
        }
    }
    (x, y)
}

#[test]
fn constant_basis_reproduces_single_y_solver_bitwise() {
    let p = build_quadratic(2, 2, 11).unwrap();
    let data = p.sample_joint(50, 2).unwrap();
    let cfg = SolverConfig { epochs: 3, batch: 8, t_inner: 5, seed: 21, ..SolverConfig::default() };
    let map = build_chebyshev(1, 1, p.domain().clone()).unwrap();
    let red = ReducedSbo::new(&p, &map).unwrap();
    let res = run(&red, &data, &cfg).unwrap();
    let (x, y) = direct_single_y(&p, &data, &cfg);
    assert_eq!(res.x_final, x);
    assert_eq!(res.w_final.column(0).into_owned(), y);
}
