//! Self-check suite behind `dsca validate`.
//!
//! Each check runs on small generated instances and reports pass/fail with a
//! one-line detail. Faults can be injected to confirm the checks bite.

use dsca_core::engine::{run_async, AlgorithmParams, EngineError, RunOptions, Schedule, StopRule};
use dsca_core::localsolve::{check_supported, prox_l1_in_ball, solve_subproblem, SubproblemInput, SurrogateKind, SurrogateSpec};
use dsca_core::netgraph::{gen_directed_ring_plus, gen_erdos_renyi, NetworkTopology};
use dsca_core::objective::{
    make_lasso, make_logistic, make_mestimator, norm, regularizer_value, Constraint, LassoParams, LogisticParams,
    MEstimatorParams, ProblemInstance, Regularizer,
};
use dsca_core::tracking::{ProtocolFaults, SyncTracking, AUDIT_TOL};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Drop the mass-buffer update of the robust push-sum.
    SkipBufferUpdate,
    /// Normalize the consensus matrix by columns instead of rows.
    ColumnNormalizeW,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub faults: Vec<Fault>,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn failing(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect()
    }
}

fn check(name: &'static str, pass: bool, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name,
        pass,
        detail: detail.into(),
    }
}

pub fn run_validation(faults: &[Fault]) -> ValidationReport {
    let checks = vec![
        stochasticity(faults.contains(&Fault::ColumnNormalizeW)),
        async_conservation(faults.contains(&Fault::SkipBufferUpdate)),
        sync_conservation(),
        prox_l1_ball(),
        subproblem_optimality(),
        gradient_fd(),
        lipschitz_bounds(),
    ];
    ValidationReport {
        pass: checks.iter().all(|c| c.pass),
        faults: faults.to_vec(),
        checks,
    }
}

fn column_normalized(w: &Array2<f64>) -> Array2<f64> {
    let sums = w.sum_axis(Axis(0));
    let mut out = w.clone();
    for (mut col, s) in out.axis_iter_mut(Axis(1)).zip(sums) {
        col /= s;
    }
    out
}

fn stochasticity(fault: bool) -> CheckResult {
    let mut failures = Vec::new();
    let mut count = 0;
    for seed in 0..5 {
        let graphs = [
            gen_directed_ring_plus(20, 9, seed),
            gen_directed_ring_plus(30, 6, seed),
            gen_erdos_renyi(20, 0.3, seed),
        ];
        for g in graphs {
            let g = match g {
                Ok(g) => g,
                Err(e) => {
                    failures.push(e.to_string());
                    continue;
                }
            };
            let w = if fault { column_normalized(g.w()) } else { g.w().clone() };
            let rebuilt = NetworkTopology::from_parts(g.num_agents(), &g.edges(), w, g.a().clone());
            count += 1;
            if let Err(e) = rebuilt.and_then(|t| t.check()) {
                failures.push(e.to_string());
            }
        }
    }
    match failures.first() {
        None => check("stochasticity", true, format!("{count} topologies row/column stochastic")),
        Some(first) => check("stochasticity", false, format!("{} of {count} failed, first: {first}", failures.len())),
    }
}

fn async_conservation(skip_buffer_update: bool) -> CheckResult {
    let problem = make_lasso(&LassoParams {
        rows_per_agent: 5,
        dimension: 10,
        num_agents: 8,
        lambda: 0.5,
        seed: 1,
        ..Default::default()
    })
    .expect("valid generator parameters")
    .0;
    let topo = gen_directed_ring_plus(8, 2, 1).expect("valid graph parameters");
    let algo = AlgorithmParams {
        surrogate: SurrogateSpec::new(SurrogateKind::Linearized, 50.0).expect("positive mu"),
        gamma: 0.05,
    };
    let opts = RunOptions {
        trace_every: 100,
        audit_every: 1,
        faults: ProtocolFaults { skip_buffer_update },
        ..Default::default()
    };
    let name = "mass_conservation_async";
    match run_async(&problem, &topo, &algo, &Schedule::default(), &StopRule::iterations(2000), &opts) {
        Ok(out) => {
            let s = out.stats;
            let pass = s.max_mass_gap_z <= AUDIT_TOL && s.max_mass_gap_phi <= AUDIT_TOL;
            check(
                name,
                pass,
                format!("{} audits, max z gap {:e}, max phi gap {:e}", s.audits, s.max_mass_gap_z, s.max_mass_gap_phi),
            )
        }
        Err(e @ EngineError::NonFinite { .. }) => check(name, false, format!("run diverged: {}", e.to_string().lines().next().unwrap_or(""))),
        Err(e) => check(name, false, e.to_string()),
    }
}

fn sync_conservation() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let topo = gen_directed_ring_plus(10, 3, 2).expect("valid graph parameters");
    let dim = 4;
    let mut grads: Vec<Array1<f64>> = (0..10).map(|_| random_array(&mut rng, dim, 1.0)).collect();
    let mut tracking = SyncTracking::new(grads.clone());
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let deltas: Vec<Array1<f64>> = (0..10).map(|_| random_array(&mut rng, dim, 0.1)).collect();
        for (g, d) in grads.iter_mut().zip(&deltas) {
            *g += d;
        }
        if let Err(e) = tracking.update(topo.a(), &deltas) {
            return check("mass_conservation_sync", false, e.to_string());
        }
        let z_sum = tracking.z().iter().fold(Array1::<f64>::zeros(dim), |acc, z| acc + z);
        let g_sum = grads.iter().fold(Array1::<f64>::zeros(dim), |acc, g| acc + g);
        let phi_sum: f64 = tracking.phi().iter().sum();
        worst = worst.max(norm((z_sum - g_sum).view())).max((phi_sum - 10.0).abs());
    }
    check("mass_conservation_sync", worst <= 1e-10, format!("1000 rounds, worst identity gap {worst:e}"))
}

fn random_array(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array1<f64> {
    (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
}

/// Exact prox by enumerating supports and signs.
fn prox_enumerate(v: &Array1<f64>, lambda: f64, radius: f64) -> Array1<f64> {
    let n = v.len();
    let objective = |x: &Array1<f64>| 0.5 * (x - v).mapv(|d| d * d).sum() + lambda * x.mapv(f64::abs).sum();
    let mut best = Array1::zeros(n);
    let mut best_val = objective(&best);
    for code in 0..3usize.pow(n as u32) {
        let mut rem = code;
        let mut signs = vec![0.0; n];
        let mut cand = Array1::zeros(n);
        for j in 0..n {
            signs[j] = [0.0, 1.0, -1.0][rem % 3];
            rem /= 3;
            if signs[j] != 0.0 {
                cand[j] = v[j] - lambda * signs[j];
            }
        }
        let len = norm(cand.view());
        if len > radius {
            cand *= radius / len;
        }
        let consistent = (0..n).all(|j| signs[j] == 0.0 || cand[j] * signs[j] > 0.0);
        if consistent && objective(&cand) < best_val {
            best_val = objective(&cand);
            best = cand;
        }
    }
    best
}

fn prox_l1_ball() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for draw in 0..200 {
        let n = rng.random_range(1..=5);
        let v = random_array(&mut rng, n, 3.0);
        let lambda = rng.random_range(0.0..1.5);
        let soft = v.mapv(|x| x.signum() * (x.abs() - lambda).max(0.0));
        let radius = if draw % 3 == 0 && norm(soft.view()) > 0.0 {
            norm(soft.view())
        } else {
            rng.random_range(0.05..3.0)
        };
        let got = prox_l1_in_ball(v.view(), lambda, radius);
        let want = prox_enumerate(&v, lambda, radius);
        worst = worst.max((got - want).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b)));
    }
    check("prox_l1_in_ball", worst <= 1e-6, format!("200 draws, worst deviation {worst:e}"))
}

/// The solver output must beat every nearby feasible point.
fn subproblem_optimality() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let regs = |rng: &mut ChaCha8Rng, n: usize| {
        vec![
            Regularizer::None,
            Regularizer::L1 { lambda: rng.random_range(0.0..1.0) },
            Regularizer::ElasticNet {
                l1: rng.random_range(0.0..1.0),
                l2: rng.random_range(0.0..1.0),
            },
            Regularizer::SparseGroupLasso {
                groups: vec![(0..n / 2).collect(), (n / 2..n).collect()].into_iter().filter(|g: &Vec<usize>| !g.is_empty()).collect::<Vec<_>>(),
                weights: vec![rng.random_range(0.0..1.0); if n >= 2 { 2 } else { 1 }],
                lambda: rng.random_range(0.0..1.0),
            },
        ]
    };
    let mut worst: f64 = 0.0;
    let mut combos = 0;
    for _ in 0..50 {
        let n = rng.random_range(1..=4);
        let center = random_array(&mut rng, n, 2.0);
        let grad = random_array(&mut rng, n, 3.0);
        let tracked = random_array(&mut rng, n, 3.0);
        let hess = random_array(&mut rng, n, 1.0).mapv(f64::abs);
        let mu = rng.random_range(0.5..2.0);
        for kind in [SurrogateKind::Linearized, SurrogateKind::DiagonalHessian] {
            for reg in regs(&mut rng, n) {
                for constraint in [Constraint::AllSpace, Constraint::L2Ball { radius: rng.random_range(0.3..2.0) }] {
                    if check_supported(kind, &reg, &constraint).is_err() {
                        continue;
                    }
                    combos += 1;
                    let spec = SurrogateSpec::new(kind, mu).expect("positive mu");
                    let input = SubproblemInput {
                        x_center: center.view(),
                        tracked_term: tracked.view(),
                        local_grad: grad.view(),
                        diag_hessian: Some(hess.view()),
                    };
                    let x = match solve_subproblem(&spec, &input, &reg, &constraint) {
                        Ok(x) => x,
                        Err(e) => return check("subproblem_optimality", false, e.to_string()),
                    };
                    let q = match kind {
                        SurrogateKind::Linearized => Array1::from_elem(n, mu),
                        SurrogateKind::DiagonalHessian => &hess + mu,
                    };
                    let phi = |z: &Array1<f64>| {
                        let d = z - &center;
                        (&grad + &tracked).dot(&d) + 0.5 * (&q * &d).dot(&d) + regularizer_value(&reg, z.view())
                    };
                    let base = phi(&x);
                    for p in 0..50 {
                        let scale = 10f64.powi(-(p % 6));
                        let mut z = &x + &random_array(&mut rng, n, scale);
                        let len = norm(z.view());
                        if len > constraint.radius() {
                            z *= constraint.radius() / len;
                        }
                        worst = worst.max(base - phi(&z));
                    }
                }
            }
        }
    }
    check(
        "subproblem_optimality",
        worst <= 1e-10,
        format!("{combos} instances, worst improvement by a probe {worst:e}"),
    )
}

fn families() -> Vec<(&'static str, ProblemInstance)> {
    let lasso = make_lasso(&LassoParams {
        dimension: 40,
        num_agents: 4,
        ..Default::default()
    });
    let logistic = make_logistic(&LogisticParams {
        dimension: 40,
        num_agents: 4,
        ..Default::default()
    });
    let mest = make_mestimator(&MEstimatorParams {
        dimension: 40,
        num_agents: 4,
        ..Default::default()
    });
    vec![
        ("lasso", lasso.expect("valid generator parameters").0),
        ("logistic", logistic.expect("valid generator parameters").0),
        ("m_estimator", mest.expect("valid generator parameters").0),
    ]
}

fn gradient_fd() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for (_, problem) in families() {
        let n = problem.dimension();
        for point in 0..3 {
            let i = point % problem.num_agents();
            let x = random_array(&mut rng, n, 1.0);
            let g = problem.grad_local(i, x.view());
            let mut fd = Array1::zeros(n);
            for j in 0..n {
                let mut up = x.clone();
                up[j] += 1e-6;
                let mut down = x.clone();
                down[j] -= 1e-6;
                fd[j] = (problem.loss_local(i, up.view()) - problem.loss_local(i, down.view())) / 2e-6;
            }
            worst = worst.max(norm((&g - &fd).view()) / norm(fd.view()).max(1e-12));
        }
    }
    check("gradient_fd", worst <= 1e-5, format!("3 families x 3 points, worst relative error {worst:e}"))
}

fn lipschitz_bounds() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for (_, problem) in families() {
        let n = problem.dimension();
        for i in 0..problem.num_agents() {
            for _ in 0..5 {
                let x = random_array(&mut rng, n, 2.0);
                let y = &x + &random_array(&mut rng, n, 0.5);
                let dg = norm((problem.grad_local(i, x.view()) - problem.grad_local(i, y.view())).view());
                let ratio = dg / (problem.lipschitz_local(i) * norm((&x - &y).view()));
                worst = worst.max(ratio);
            }
        }
    }
    check("lipschitz_bound", worst <= 1.0 + 1e-9, format!("worst ||dg|| / (l ||dx||) = {worst:.6}"))
}
