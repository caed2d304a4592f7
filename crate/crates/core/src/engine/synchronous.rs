//! Synchronous runner: every agent updates in every round.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    all_finite, build_row, residual_bound_holds, target_reached, validate_inputs, AlgorithmParams, EngineError,
    EventLog, LoggedEvent, RowInputs, RunOptions, RunOutput, RunStats, Schedule, StopReason, StopRule, Timing,
};
use crate::exec::Execution;
use crate::localsolve::{relax, solve_subproblem, SolveError, SubproblemInput, SurrogateKind};
use crate::metrics;
use crate::netgraph::NetworkTopology;
use crate::objective::{norm, ProblemInstance};
use crate::tracking::SyncTracking;

/// `(||sum z - sum grad||, |sum phi - I|)`
fn sum_preservation_gaps(tracking: &SyncTracking, grads: &[Array1<f64>]) -> (f64, f64) {
    let n = grads[0].len();
    let mut z = tracking.z().iter().fold(Array1::zeros(n), |acc, z| acc + z);
    for g in grads {
        z -= g;
    }
    let phi: f64 = tracking.phi().iter().sum::<f64>() - grads.len() as f64;
    (norm(z.view()), phi.abs())
}

/// Runs synchronous rounds until `stop` fires. The simulated duration of a
/// round is the slowest compute plus the slowest transit, drawn from `schedule`.
pub fn run_sync(
    problem: &ProblemInstance,
    topology: &NetworkTopology,
    algo: &AlgorithmParams,
    schedule: &Schedule,
    stop: &StopRule,
    opts: &RunOptions,
) -> Result<RunOutput, EngineError> {
    validate_inputs(problem, topology, algo, schedule, opts)?;
    let num = topology.num_agents();
    let n = problem.dimension();
    let w = topology.w();
    let exec = opts.exec;
    let timing = Timing::new(schedule);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut log = EventLog::default();
    let num_edges = topology.num_edges();

    let mut xs: Vec<Array1<f64>> = vec![Array1::zeros(n); num];
    let mut grads: Vec<Array1<f64>> = exec.map(num, |i| problem.grad_local(i, xs[i].view()));
    let mut tracking = SyncTracking::new(grads.clone());
    let mut stats = RunStats {
        min_phi: 1.0,
        ..RunStats::default()
    };
    let mut trace = Vec::new();
    let mut time = 0.0;
    let mut k: u64 = 0;
    let mut max_delta = 0.0;

    let mut record = |k: u64,
                      time: f64,
                      xs: &[Array1<f64>],
                      grads: &[Array1<f64>],
                      tracking: &SyncTracking,
                      delta: f64,
                      stats: &mut RunStats|
     -> Result<_, EngineError> {
        let (gz, gphi) = sum_preservation_gaps(tracking, grads);
        stats.audits += 1;
        stats.max_mass_gap_z = stats.max_mass_gap_z.max(gz);
        stats.max_mass_gap_phi = stats.max_mass_gap_phi.max(gphi);
        let row = build_row(
            problem,
            opts,
            RowInputs {
                k,
                time,
                agent: None,
                xs,
                ys: tracking.y(),
                grads,
                delta,
                mass_gap_z: gz,
                mass_gap_phi: gphi,
                max_delay_obs: 0,
                max_gap_obs: u64::from(k > 0),
            },
        )?;
        let reason = target_reached(stop, &row);
        trace.push(row);
        Ok(reason)
    };

    let mut reason = record(k, time, &xs, &grads, &tracking, 0.0, &mut stats)?;
    let mut last_recorded = 0;

    while reason.is_none() {
        if k >= stop.max_iters {
            reason = Some(StopReason::MaxIters);
            break;
        }
        let compute = (0..num).map(|_| timing.compute(&mut rng)).fold(0.0, f64::max);
        let transit = (0..num_edges).map(|_| timing.transit(&mut rng)).fold(0.0, f64::max);
        let round_end = time + compute + transit;
        if stop.max_sim_time_ms.is_some_and(|limit| round_end > limit) {
            reason = Some(StopReason::MaxSimTime);
            break;
        }
        time = round_end;
        log.push(LoggedEvent::Round { time, k });
        let on_row = (k + 1).is_multiple_of(opts.trace_every);

        // S.1
        let ys = tracking.y();
        let steps: Vec<Result<(Array1<f64>, f64), SolveError>> = exec.map(num, |i| {
            let tracked = &ys[i] * num as f64 - &grads[i];
            let hess = match algo.surrogate.kind {
                SurrogateKind::DiagonalHessian => Some(problem.hessian_diag_local(i, xs[i].view())),
                SurrogateKind::Linearized => None,
            };
            let input = SubproblemInput {
                x_center: xs[i].view(),
                tracked_term: tracked.view(),
                local_grad: grads[i].view(),
                diag_hessian: hess.as_ref().map(|h| h.view()),
            };
            let x_tilde = solve_subproblem(&algo.surrogate, &input, problem.regularizer(), &problem.constraint())?;
            let delta = norm((&x_tilde - &xs[i]).view());
            Ok((relax(xs[i].view(), x_tilde.view(), algo.gamma), delta))
        });
        let mut vs = Vec::with_capacity(num);
        let mut deltas = Vec::with_capacity(num);
        for s in steps {
            let (v, d) = s?;
            vs.push(v);
            deltas.push(d);
        }
        max_delta = deltas.iter().copied().fold(0.0, f64::max);

        if on_row && opts.check_residual_bound {
            let bound = exec.map(num, |i| {
                let g = metrics::full_gradient(problem, xs[i].view(), Execution::Sequential);
                let d = &ys[i] * num as f64 - g;
                metrics::residual_bound(problem, &algo.surrogate, xs[i].view(), deltas[i], d.dot(&d), Execution::Sequential)
            });
            for b in bound {
                let (lhs, rhs) = b?;
                stats.residual_bound_checks += 1;
                if !residual_bound_holds(lhs, rhs) {
                    stats.residual_bound_violations += 1;
                }
            }
        }

        // S.2
        let new_xs: Vec<Array1<f64>> = exec.map(num, |i| {
            let mut x = &vs[i] * w[[i, i]];
            for &j in topology.in_neighbors(i) {
                x.scaled_add(w[[i, j]], &vs[j]);
            }
            x
        });
        let radius = problem.constraint().radius();
        for x in &new_xs {
            stats.max_infeasibility = stats.max_infeasibility.max(norm(x.view()) - radius);
        }

        // S.3
        let new_grads: Vec<Array1<f64>> = exec.map(num, |i| problem.grad_local(i, new_xs[i].view()));
        let grad_deltas: Vec<Array1<f64>> = new_grads.iter().zip(&grads).map(|(a, b)| a - b).collect();
        tracking.update(topology.a(), &grad_deltas)?;
        xs = new_xs;
        grads = new_grads;
        k += 1;
        stats.min_phi = tracking.phi().iter().copied().fold(stats.min_phi, f64::min);

        if let Some(i) = (0..num).find(|&i| !all_finite(&xs[i]) || !all_finite(&tracking.y()[i])) {
            return Err(EngineError::NonFinite {
                k: k - 1,
                agent: i,
                recent: log.snapshot(),
            });
        }

        if on_row {
            reason = record(k, time, &xs, &grads, &tracking, max_delta, &mut stats)?;
            last_recorded = k;
        } else if opts.audit_every > 0 && k.is_multiple_of(opts.audit_every) {
            let (gz, gphi) = sum_preservation_gaps(&tracking, &grads);
            stats.audits += 1;
            stats.max_mass_gap_z = stats.max_mass_gap_z.max(gz);
            stats.max_mass_gap_phi = stats.max_mass_gap_phi.max(gphi);
        }
    }
    if last_recorded != k {
        record(k, time, &xs, &grads, &tracking, max_delta, &mut stats)?;
    }

    stats.iterations = k;
    stats.sim_time_ms = time;
    stats.max_gap_obs = u64::from(k > 0);
    Ok(RunOutput {
        ys: tracking.y().to_vec(),
        xs,
        trace,
        stats,
        stop: reason.expect("loop exits with a reason"),
    })
}
