use dsca_core::engine::{run_async, run_sync, AlgorithmParams, RunOptions, Schedule, StopRule};
use dsca_core::localsolve::{SurrogateKind, SurrogateSpec};
use dsca_core::metrics::merit;
use dsca_core::netgraph::{gen_directed_ring_plus, gen_erdos_renyi, NetworkTopology, STOCHASTIC_TOL};
use dsca_core::objective::{make_lasso, make_logistic, make_mestimator, LassoParams, LogisticParams, MEstimatorParams};
use dsca_core::tracking::{mass_conservation_audit, ReceivedMass, TrackingState, AUDIT_TOL};
use dsca_core::Execution;
use ndarray::Array1;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn assert_mixing(t: &NetworkTopology) {
    let n = t.num_agents();
    for i in 0..n {
        let row: f64 = t.w().row(i).sum();
        let col: f64 = t.a().column(i).sum();
        assert!((row - 1.0).abs() <= STOCHASTIC_TOL, "W row {i} sums to {row}");
        assert!((col - 1.0).abs() <= STOCHASTIC_TOL, "A column {i} sums to {col}");
        assert!(t.w()[[i, i]] > 0.0 && t.a()[[i, i]] > 0.0);
        for j in 0..n {
            let edge = i != j && t.out_neighbors(j).contains(&i);
            if i != j {
                assert_eq!(t.w()[[i, j]] > 0.0, edge);
                assert_eq!(t.a()[[i, j]] > 0.0, edge);
            }
            assert!(t.w()[[i, j]] >= 0.0 && t.a()[[i, j]] >= 0.0);
        }
    }
}

fn small_lasso(agents: usize, seed: u64) -> dsca_core::objective::ProblemInstance {
    make_lasso(&LassoParams {
        rows_per_agent: 4,
        dimension: 6,
        num_agents: agents,
        lambda: 0.5,
        seed,
        ..Default::default()
    })
    .unwrap()
    .0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ring_plus_weights_are_stochastic(n in 2usize..30, extra in 0usize..8, seed in any::<u64>()) {
        prop_assume!(extra + 2 <= n);
        let t = gen_directed_ring_plus(n, extra, seed).unwrap();
        assert_mixing(&t);
        prop_assert!(t.check().is_ok());
        for i in 0..n {
            prop_assert_eq!(t.out_neighbors(i).len(), extra + 1);
        }
    }

    #[test]
    fn erdos_renyi_weights_are_doubly_stochastic(n in 2usize..25, p in 0.2f64..1.0, seed in any::<u64>()) {
        let t = gen_erdos_renyi(n, p, seed).unwrap();
        assert_mixing(&t);
        for i in 0..n {
            let col: f64 = t.w().column(i).sum();
            prop_assert!((col - 1.0).abs() <= STOCHASTIC_TOL);
            for j in 0..n {
                prop_assert_eq!(t.w()[[i, j]], t.w()[[j, i]]);
            }
        }
    }

    /// Random activation order, random perturbations, and deliveries that are
    /// delayed, reordered or never happen: total mass still matches.
    #[test]
    fn push_sum_conserves_mass_under_any_delivery(
        n in 2usize..8,
        extra in 0usize..4,
        seed in any::<u64>(),
        steps in 1usize..200,
    ) {
        prop_assume!(extra + 2 <= n);
        let topo = gen_directed_ring_plus(n, extra, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let dim = 3;
        let mut grads: Vec<Array1<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut states: Vec<TrackingState> = (0..n).map(|i| TrackingState::new(i, &topo, grads[i].clone())).collect();
        // counters each receiver currently holds per in-slot, possibly stale
        let mut held: Vec<Vec<Option<(Array1<f64>, f64)>>> = (0..n).map(|i| vec![None; topo.in_neighbors(i).len()]).collect();
        for _ in 0..steps {
            let i = rng.random_range(0..n);
            for (slot, &j) in topo.in_neighbors(i).iter().enumerate() {
                // deliver the sender's current counters with probability 1/2
                if rng.random_bool(0.5) {
                    let (rho, sigma) = states[j].counters_for(i).unwrap();
                    held[i][slot] = Some((rho.clone(), sigma));
                }
            }
            let pert: Array1<f64> = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
            grads[i] += &pert;
            let received: Vec<Option<ReceivedMass>> = held[i]
                .iter()
                .map(|h| h.as_ref().map(|(r, s)| ReceivedMass { rho: r.view(), sigma: *s }))
                .collect();
            states[i].robust_update(&received, pert.view(), Default::default()).unwrap();
            let gsum = grads.iter().fold(Array1::<f64>::zeros(dim), |acc, g| acc + g);
            let audit = mass_conservation_audit(&states, gsum.view());
            prop_assert!(audit.z_gap <= AUDIT_TOL && audit.phi_gap <= AUDIT_TOL, "{audit:?}");
        }
    }

    #[test]
    fn composite_objective_is_convex_on_segments(seed in any::<u64>(), t in 0.0f64..1.0, logistic in any::<bool>()) {
        let problem = if logistic {
            make_logistic(&LogisticParams { samples_per_agent: 3, dimension: 10, num_agents: 4, seed, ..Default::default() }).unwrap().0
        } else {
            small_lasso(4, seed)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = problem.dimension();
        let x: Array1<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Array1<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mid = &x * t + &y * (1.0 - t);
        let (ux, uy, um) = (problem.eval_u(x.view()).value, problem.eval_u(y.view()).value, problem.eval_u(mid.view()).value);
        prop_assert!(um <= t * ux + (1.0 - t) * uy + 1e-9 * (ux.abs() + uy.abs() + 1.0));
    }

    #[test]
    fn frozen_iterates_stay_put(seed in any::<u64>(), dh in any::<bool>()) {
        let problem = small_lasso(5, seed);
        let topo = gen_directed_ring_plus(5, 1, seed).unwrap();
        let kind = if dh { SurrogateKind::DiagonalHessian } else { SurrogateKind::Linearized };
        let algo = AlgorithmParams { surrogate: SurrogateSpec::new(kind, 5.0).unwrap(), gamma: 0.0 };
        let schedule = Schedule { seed, ..Default::default() };
        let out = run_async(&problem, &topo, &algo, &schedule, &StopRule::iterations(300), &RunOptions { trace_every: 50, ..Default::default() }).unwrap();
        for x in &out.xs {
            prop_assert!(x.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn iterates_stay_in_the_ball(seed in any::<u64>(), sync in any::<bool>()) {
        let problem = make_mestimator(&MEstimatorParams {
            samples_per_agent: 5,
            dimension: 8,
            num_agents: 6,
            radius: 0.5,
            seed,
            ..Default::default()
        }).unwrap().0;
        let topo = gen_directed_ring_plus(6, 2, seed).unwrap();
        let algo = AlgorithmParams { surrogate: SurrogateSpec::new(SurrogateKind::Linearized, 0.5).unwrap(), gamma: 0.5 };
        let stop = StopRule::iterations(400);
        let opts = RunOptions { trace_every: 40, ..Default::default() };
        let schedule = Schedule { seed, ..Default::default() };
        let out = if sync {
            run_sync(&problem, &topo, &algo, &schedule, &stop, &opts)
        } else {
            run_async(&problem, &topo, &algo, &schedule, &stop, &opts)
        }.unwrap();
        prop_assert!(out.stats.max_infeasibility <= 1e-12);
        for x in &out.xs {
            prop_assert!(x.dot(x).sqrt() <= 0.5 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn merit_is_nonnegative(seed in any::<u64>(), spread in 0.0f64..5.0) {
        let problem = small_lasso(3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Array1<f64>> = (0..3).map(|_| (0..6).map(|_| spread * rng.random_range(-1.0..1.0)).collect()).collect();
        prop_assert!(merit(&problem, &xs, Execution::Sequential).unwrap() >= 0.0);
    }
}
