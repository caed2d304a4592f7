use approx::assert_abs_diff_eq;
use dsca_core::metrics::{
    fit_rate, hitting_times, merit, solve_reference, FitWindow, RateError, ReferenceError, ReferenceOptions,
};
use dsca_core::objective::{
    make_lasso, make_mestimator, Constraint, LassoParams, LocalLoss, MEstimatorParams, ProblemInstance, Regularizer,
};
use dsca_core::trace::{TraceQuantity, TraceRecord};
use dsca_core::Execution;
use nalgebra::{DMatrix, DVector};
use ndarray::{arr1, arr2, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quadratic(m: Array2<f64>, b: Array1<f64>) -> LocalLoss {
    LocalLoss::Quadratic { m, b }
}

/// Merit written out coordinate by coordinate for `n = 2`, `G = lambda ||.||_1`.
fn merit_by_hand(mats: &[([[f64; 2]; 2], [f64; 2])], lambda: f64, xs: &[[f64; 2]]) -> f64 {
    let k = xs.len() as f64;
    let xbar = [xs.iter().map(|x| x[0]).sum::<f64>() / k, xs.iter().map(|x| x[1]).sum::<f64>() / k];
    let mut grad = [0.0; 2];
    for (m, b) in mats {
        let r = [
            m[0][0] * xbar[0] + m[0][1] * xbar[1] - b[0],
            m[1][0] * xbar[0] + m[1][1] * xbar[1] - b[1],
        ];
        grad[0] += 2.0 * (m[0][0] * r[0] + m[1][0] * r[1]);
        grad[1] += 2.0 * (m[0][1] * r[0] + m[1][1] * r[1]);
    }
    let mut stat = 0.0;
    for j in 0..2 {
        let v: f64 = xbar[j] - grad[j];
        let p = if v > lambda {
            v - lambda
        } else if v < -lambda {
            v + lambda
        } else {
            0.0
        };
        stat += (xbar[j] - p).powi(2);
    }
    let disagreement: f64 = xs.iter().map(|x| (x[0] - xbar[0]).powi(2) + (x[1] - xbar[1]).powi(2)).sum();
    stat.max(disagreement)
}

#[test]
fn merit_matches_independent_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let mut mats = Vec::new();
        let mut locals = Vec::new();
        for _ in 0..3 {
            let m = [[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]];
            let b = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            locals.push(quadratic(arr2(&m), arr1(&b)));
            mats.push((m, b));
        }
        let lambda = rng.random_range(0.0..1.0);
        let problem = ProblemInstance::new(locals, Regularizer::L1 { lambda }, Constraint::AllSpace, None).unwrap();
        let spread = 10f64.powi(rng.random_range(-4..1));
        let xs: Vec<[f64; 2]> = (0..3).map(|_| [spread * rng.random_range(-1.0..1.0), spread * rng.random_range(-1.0..1.0)]).collect();
        let arrays: Vec<Array1<f64>> = xs.iter().map(|x| arr1(x)).collect();
        let got = merit(&problem, &arrays, Execution::Sequential).unwrap();
        let want = merit_by_hand(&mats, lambda, &xs);
        assert_abs_diff_eq!(got, want, epsilon = 1e-12 * want.max(1.0));
    }
}

#[test]
fn merit_of_equal_nonstationary_states_is_the_residual() {
    let problem = ProblemInstance::new(vec![quadratic(arr2(&[[1.0]]), arr1(&[2.0]))], Regularizer::None, Constraint::AllSpace, None).unwrap();
    // grad at 0 is -4, so the unit-step residual is 4
    let xs = vec![arr1(&[0.0]); 3];
    assert_abs_diff_eq!(merit(&problem, &xs, Execution::Sequential).unwrap(), 16.0, epsilon = 1e-12);
}

#[test]
fn reference_one_dimensional_lasso() {
    let problem = ProblemInstance::new(
        vec![quadratic(arr2(&[[1.0]]), arr1(&[2.0]))],
        Regularizer::L1 { lambda: 1.0 },
        Constraint::AllSpace,
        None,
    )
    .unwrap();
    let sol = solve_reference(&problem, &ReferenceOptions::default()).unwrap();
    assert_abs_diff_eq!(sol.x_star[0], 1.5, epsilon = 1e-10);
    assert_abs_diff_eq!(sol.u_star, 1.75, epsilon = 1e-10);
    assert!(sol.certified);
    // 1-D grid over [-5, 5] at spacing 1e-5
    let u = |x: f64| (x - 2.0).powi(2) + x.abs();
    let (best_x, best_u) = (0..=1_000_000)
        .map(|i| -5.0 + 1e-5 * i as f64)
        .map(|x| (x, u(x)))
        .fold((0.0, f64::INFINITY), |acc, p| if p.1 < acc.1 { p } else { acc });
    assert_abs_diff_eq!(sol.x_star[0], best_x, epsilon = 1e-5);
    assert!(sol.u_star <= best_u + 1e-12);
}

#[test]
fn reference_smooth_quadratic_solves_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (rows, n) = (12, 5);
    let mut locals = Vec::new();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for _ in 0..3 {
        let m = Array2::from_shape_fn((rows, n), |_| rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(rows, |_| rng.random_range(-1.0..1.0));
        let dm = DMatrix::from_row_slice(rows, n, m.as_slice().unwrap());
        gram += dm.transpose() * &dm;
        rhs += dm.transpose() * DVector::from_column_slice(b.as_slice().unwrap());
        locals.push(quadratic(m, b));
    }
    let problem = ProblemInstance::new(locals, Regularizer::None, Constraint::AllSpace, None).unwrap();
    let opts = ReferenceOptions { tol: 1e-12, ..Default::default() };
    let sol = solve_reference(&problem, &opts).unwrap();
    let want = gram.cholesky().unwrap().solve(&rhs);
    assert!(sol.kkt_residual <= 1e-12);
    for j in 0..n {
        assert_abs_diff_eq!(sol.x_star[j], want[j], epsilon = 1e-10);
    }
}

#[test]
fn reference_is_stable_across_configurations() {
    let problem = make_lasso(&LassoParams::default()).unwrap().0;
    let cold = solve_reference(&problem, &ReferenceOptions { exec: Execution::Sequential, ..Default::default() }).unwrap();
    assert!(cold.kkt_residual <= 1e-10);
    // a different start point and a looser then tighter target
    let warm_start: Array1<f64> = Array1::from_elem(problem.dimension(), 0.3);
    let warm = solve_reference(
        &problem,
        &ReferenceOptions {
            tol: 5e-12,
            warm_start: Some(warm_start),
            ..Default::default()
        },
    )
    .unwrap();
    assert_abs_diff_eq!(cold.u_star, warm.u_star, epsilon = 1e-10);
    let warm2 = solve_reference(&problem, &ReferenceOptions { warm_start: Some(cold.x_star.clone()), ..Default::default() }).unwrap();
    assert_abs_diff_eq!(cold.u_star, warm2.u_star, epsilon = 1e-8);
}

#[test]
fn reference_reports_best_residual_when_out_of_budget() {
    let problem = make_lasso(&LassoParams::default()).unwrap().0;
    match solve_reference(&problem, &ReferenceOptions { max_iters: 20, ..Default::default() }) {
        Err(ReferenceError::NotConverged { iterations, residual, .. }) => {
            assert_eq!(iterations, 20);
            assert!(residual.is_finite() && residual > 1e-11);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn reference_on_nonconvex_instance_is_not_certified() {
    let problem = make_mestimator(&MEstimatorParams::default()).unwrap().0;
    let sol = solve_reference(&problem, &ReferenceOptions { tol: 1e-9, ..Default::default() }).unwrap();
    assert!(!sol.certified);
    assert!(sol.x_star.dot(&sol.x_star).sqrt() <= 2.0 + 1e-12);
}

fn rows(values: impl Iterator<Item = (u64, f64)>) -> Vec<TraceRecord> {
    values
        .map(|(k, merit)| TraceRecord {
            k,
            sim_time_ms: k as f64,
            agent: None,
            u_mean: 0.0,
            u_gap: None,
            merit,
            consensus_err: 0.0,
            tracking_err: 0.0,
            tracking_err_max: 0.0,
            grad_tracking_gap: 0.0,
            delta_norm: 0.0,
            mass_gap_z: 0.0,
            mass_gap_phi: 0.0,
            max_delay_obs: 0,
            max_gap_obs: 0,
        })
        .collect()
}

#[test]
fn geometric_sequence_gives_its_ratio() {
    let trace = rows((0..200).map(|k| (k, 0.9f64.powi(k as i32))));
    let fit = fit_rate(&trace, TraceQuantity::Merit, FitWindow::All).unwrap();
    assert_abs_diff_eq!(fit.lambda, 0.9, epsilon = 1e-6);
    assert!(fit.r_squared >= 1.0 - 1e-9);
    let decades = fit_rate(&trace, TraceQuantity::Merit, FitWindow::Decades { upper: 1e-2, lower: 1e-6 }).unwrap();
    assert_abs_diff_eq!(decades.lambda, 0.9, epsilon = 1e-6);
    assert_eq!(decades.k_start, 44);
}

#[test]
fn harmonic_sequence_is_not_linear_and_hits_in_tenfold_steps() {
    let trace = rows((1..=100_000).map(|k| (k, 1.0 / k as f64)));
    let fit = fit_rate(&trace, TraceQuantity::Merit, FitWindow::All).unwrap();
    assert!(fit.r_squared < 0.9, "R^2 = {}", fit.r_squared);
    let t = hitting_times(&trace, TraceQuantity::Merit, &[1e-2, 1e-3, 1e-4]);
    assert_eq!(t, vec![Some(100), Some(1000), Some(10_000)]);
    let never = hitting_times(&trace, TraceQuantity::Merit, &[1e-6]);
    assert_eq!(never, vec![None]);
}

#[test]
fn fit_needs_enough_points_and_the_quantity() {
    let trace = rows((0..5).map(|k| (k, 0.5f64.powi(k as i32))));
    assert!(matches!(fit_rate(&trace, TraceQuantity::Merit, FitWindow::All), Err(RateError::TooFewPoints { .. })));
    let trace = rows((0..50).map(|k| (k, 1.0)));
    assert!(matches!(fit_rate(&trace, TraceQuantity::UGap, FitWindow::All), Err(RateError::MissingQuantity(_))));
}
