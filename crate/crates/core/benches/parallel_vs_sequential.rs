use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dsca_core::engine::{run_async, run_sync, AlgorithmParams, RunOptions, Schedule, StopRule};
use dsca_core::localsolve::{SurrogateKind, SurrogateSpec};
use dsca_core::metrics::{mean_objective, merit};
use dsca_core::netgraph::gen_directed_ring_plus;
use dsca_core::objective::{make_lasso, LassoParams};
use dsca_core::Execution;
use ndarray::Array1;

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn label(exec: Execution) -> &'static str {
    match exec {
        Execution::Sequential => "sequential",
        Execution::Parallel => "parallel",
    }
}

fn setup() -> (dsca_core::objective::ProblemInstance, dsca_core::netgraph::NetworkTopology, AlgorithmParams) {
    let problem = make_lasso(&LassoParams::default()).unwrap().0;
    let topo = gen_directed_ring_plus(20, 9, 1).unwrap();
    let algo = AlgorithmParams {
        surrogate: SurrogateSpec::new(SurrogateKind::Linearized, 10.0).unwrap(),
        gamma: 0.03,
    };
    (problem, topo, algo)
}

fn sync_rounds(c: &mut Criterion) {
    let (problem, topo, algo) = setup();
    let mut group = c.benchmark_group("sync_lasso_50_rounds");
    group.sample_size(10);
    for exec in MODES {
        let opts = RunOptions { trace_every: 10, exec, ..Default::default() };
        group.bench_with_input(BenchmarkId::from_parameter(label(exec)), &opts, |b, opts| {
            b.iter(|| run_sync(&problem, &topo, &algo, &Schedule::default(), &StopRule::iterations(50), opts).unwrap())
        });
    }
    group.finish();
}

fn metric_evaluation(c: &mut Criterion) {
    let (problem, _, _) = setup();
    let xs: Vec<Array1<f64>> = (0..20)
        .map(|i| Array1::from_shape_fn(300, |j| ((i * 300 + j) as f64 * 0.013).sin()))
        .collect();
    let mut group = c.benchmark_group("objective_and_merit");
    for exec in MODES {
        group.bench_function(label(exec), |b| {
            b.iter(|| {
                let u = mean_objective(&problem, black_box(&xs), exec);
                let m = merit(&problem, black_box(&xs), exec).unwrap();
                (u, m)
            })
        });
    }
    group.finish();
}

fn seed_sweep(c: &mut Criterion) {
    let (problem, topo, algo) = setup();
    let mut group = c.benchmark_group("async_seed_sweep_8x400");
    group.sample_size(10);
    for exec in MODES {
        group.bench_function(label(exec), |b| {
            b.iter(|| {
                exec.map(8, |seed| {
                    let schedule = Schedule { seed: seed as u64, ..Default::default() };
                    let opts = RunOptions { trace_every: 100, exec: Execution::Sequential, ..Default::default() };
                    run_async(&problem, &topo, &algo, &schedule, &StopRule::iterations(400), &opts)
                        .unwrap()
                        .stats
                        .iterations
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, sync_rounds, metric_evaluation, seed_sweep);
criterion_main!(benches);
