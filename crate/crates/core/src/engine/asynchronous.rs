//! Event-driven asynchronous runner.

use std::sync::Arc;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    all_finite, build_row, residual_bound_holds, target_reached, validate_inputs, AlgorithmParams, EngineError, Event,
    EventLog, EventQueue, LoggedEvent, Packet, RowInputs, RunOptions, RunOutput, RunStats, Schedule, StopReason,
    StopRule, Timing,
};
use crate::localsolve::{relax, solve_subproblem, SubproblemInput, SurrogateKind};
use crate::metrics;
use crate::netgraph::NetworkTopology;
use crate::objective::{norm, ProblemInstance};
use crate::trace::TraceRecord;
use crate::tracking::{mass_conservation_audit, ReceivedMass, TrackingState};

struct Agent {
    x: Array1<f64>,
    grad: Array1<f64>,
    tracking: TrackingState,
    /// Freshest packet per in-neighbor slot.
    mailbox: Vec<Option<Packet>>,
    /// Generation of the information consumed per slot.
    tau: Vec<u64>,
    /// `w_ij` per in-neighbor slot.
    w_in: Vec<f64>,
    w_self: f64,
    /// Global iteration of the previous update, `-1` before the first.
    last_update: i64,
}

struct Sim<'a> {
    problem: &'a ProblemInstance,
    algo: &'a AlgorithmParams,
    opts: &'a RunOptions,
    timing: Timing,
    rng: ChaCha8Rng,
    queue: EventQueue,
    agents: Vec<Agent>,
    /// `slot_of[r][s]`: position of sender `s` in receiver `r`'s in-neighbor list.
    slot_of: Vec<Vec<Option<usize>>>,
    k: u64,
    time: f64,
    stats: RunStats,
    log: EventLog,
    trace: Vec<TraceRecord>,
}

impl Sim<'_> {
    fn emit(&mut self, sender: usize, v: Arc<Array1<f64>>) {
        let st = &self.agents[sender].tracking;
        let packets: Vec<(usize, Array1<f64>, f64)> = st
            .out_neighbors()
            .iter()
            .map(|&j| {
                let (rho, sigma) = st.counters_for(j).expect("out-neighbor");
                (j, rho.clone(), sigma)
            })
            .collect();
        for (receiver, rho, sigma) in packets {
            let arrival = self.time + self.timing.transit(&mut self.rng);
            let p = Packet {
                sender,
                receiver,
                generation: self.k,
                v: Arc::clone(&v),
                rho,
                sigma,
                send_time: self.time,
                arrival_time: arrival,
            };
            self.queue.push(arrival, Event::Arrival(Box::new(p)));
            self.stats.packets_sent += 1;
        }
    }

    fn schedule_compute(&mut self, agent: usize) {
        let at = self.time + self.timing.compute(&mut self.rng);
        self.queue.push(at, Event::Compute { agent });
    }

    fn deliver(&mut self, p: Packet) {
        self.log.push(LoggedEvent::Arrival {
            time: self.time,
            sender: p.sender,
            receiver: p.receiver,
            generation: p.generation,
        });
        let slot = self.slot_of[p.receiver][p.sender].expect("packets follow edges");
        let entry = &mut self.agents[p.receiver].mailbox[slot];
        match entry {
            Some(old) if old.generation >= p.generation => self.stats.packets_discarded += 1,
            _ => *entry = Some(p),
        }
    }

    fn max_open_gap(&self) -> u64 {
        let k = self.k as i64;
        self.agents
            .iter()
            .map(|a| (k - a.last_update) as u64)
            .max()
            .unwrap_or(0)
            .max(self.stats.max_gap_obs)
    }

    fn audit(&mut self) -> (f64, f64) {
        let n = self.problem.dimension();
        let gsum = self.agents.iter().fold(Array1::zeros(n), |acc, a| acc + &a.grad);
        let states: Vec<&TrackingState> = self.agents.iter().map(|a| &a.tracking).collect();
        let audit = mass_conservation_audit(&states, gsum.view());
        self.stats.audits += 1;
        self.stats.max_mass_gap_z = self.stats.max_mass_gap_z.max(audit.z_gap);
        self.stats.max_mass_gap_phi = self.stats.max_mass_gap_phi.max(audit.phi_gap);
        (audit.z_gap, audit.phi_gap)
    }

    fn record(&mut self, agent: Option<usize>, delta: f64) -> Result<TraceRecord, EngineError> {
        let (gz, gphi) = self.audit();
        let xs: Vec<Array1<f64>> = self.agents.iter().map(|a| a.x.clone()).collect();
        let ys: Vec<Array1<f64>> = self.agents.iter().map(|a| a.tracking.y().clone()).collect();
        let grads: Vec<Array1<f64>> = self.agents.iter().map(|a| a.grad.clone()).collect();
        let row = build_row(
            self.problem,
            self.opts,
            RowInputs {
                k: self.k,
                time: self.time,
                agent,
                xs: &xs,
                ys: &ys,
                grads: &grads,
                delta,
                mass_gap_z: gz,
                mass_gap_phi: gphi,
                max_delay_obs: self.stats.max_delay_obs,
                max_gap_obs: self.max_open_gap(),
            },
        )?;
        self.trace.push(row.clone());
        Ok(row)
    }

    /// One activation of agent `i`: refresh `tau`, S.1 to S.3, emit, reschedule.
    fn activate(&mut self, i: usize, want_bound: bool) -> Result<f64, EngineError> {
        let problem = self.problem;
        let num = self.agents.len() as f64;
        let k = self.k;
        self.log.push(LoggedEvent::Compute {
            time: self.time,
            agent: i,
            k,
        });

        let agent = &mut self.agents[i];
        for (slot, entry) in agent.mailbox.iter().enumerate() {
            if let Some(p) = entry {
                agent.tau[slot] = agent.tau[slot].max(p.generation);
            }
        }
        let delay = agent.tau.iter().map(|&t| k - t.min(k)).max().unwrap_or(0);
        self.stats.max_delay_obs = self.stats.max_delay_obs.max(delay);
        let gap = (k as i64 - agent.last_update) as u64;
        self.stats.max_gap_obs = self.stats.max_gap_obs.max(gap);
        agent.last_update = k as i64;

        // S.1
        let tracked = agent.tracking.y() * num - &agent.grad;
        let hess = match self.algo.surrogate.kind {
            SurrogateKind::DiagonalHessian => Some(problem.hessian_diag_local(i, agent.x.view())),
            SurrogateKind::Linearized => None,
        };
        let input = SubproblemInput {
            x_center: agent.x.view(),
            tracked_term: tracked.view(),
            local_grad: agent.grad.view(),
            diag_hessian: hess.as_ref().map(|h| h.view()),
        };
        let x_tilde = solve_subproblem(&self.algo.surrogate, &input, problem.regularizer(), &problem.constraint())?;
        let delta = norm((&x_tilde - &agent.x).view());
        let v = relax(agent.x.view(), x_tilde.view(), self.algo.gamma);

        if want_bound {
            let g = metrics::full_gradient(problem, agent.x.view(), self.opts.exec);
            let d = agent.tracking.y() * num - g;
            let (lhs, rhs) = metrics::residual_bound(
                problem,
                &self.algo.surrogate,
                agent.x.view(),
                delta,
                d.dot(&d),
                self.opts.exec,
            )?;
            self.stats.residual_bound_checks += 1;
            if !residual_bound_holds(lhs, rhs) {
                self.stats.residual_bound_violations += 1;
            }
        }

        // S.2
        let mut x_new = &v * agent.w_self;
        for (slot, entry) in agent.mailbox.iter().enumerate() {
            if let Some(p) = entry {
                x_new.scaled_add(agent.w_in[slot], &*p.v);
            }
        }
        let infeas = norm(x_new.view()) - problem.constraint().radius();
        self.stats.max_infeasibility = self.stats.max_infeasibility.max(infeas);

        // S.3
        let g_new = problem.grad_local(i, x_new.view());
        let eps = &g_new - &agent.grad;
        let received: Vec<Option<ReceivedMass<'_>>> = agent
            .mailbox
            .iter()
            .map(|e| {
                e.as_ref().map(|p| ReceivedMass {
                    rho: p.rho.view(),
                    sigma: p.sigma,
                })
            })
            .collect();
        agent.tracking.robust_update(&received, eps.view(), self.opts.faults)?;
        agent.x = x_new;
        agent.grad = g_new;
        self.stats.min_phi = self.stats.min_phi.min(agent.tracking.phi());

        if !all_finite(&agent.x) || !all_finite(agent.tracking.y()) {
            return Err(EngineError::NonFinite {
                k,
                agent: i,
                recent: self.log.snapshot(),
            });
        }

        self.k += 1;
        self.emit(i, Arc::new(v));
        self.schedule_compute(i);
        Ok(delta)
    }
}

/// Runs the asynchronous method under `schedule` until `stop` fires.
///
/// Every agent starts at `x = 0`, sends its initial `v = 0` at `t = 0` and
/// schedules its first compute completion. Each compute completion is one
/// global iteration.
pub fn run_async(
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

    let agents: Vec<Agent> = (0..num)
        .map(|i| {
            let x = Array1::zeros(n);
            let grad = problem.grad_local(i, x.view());
            let ins = topology.in_neighbors(i);
            Agent {
                tracking: TrackingState::new(i, topology, grad.clone()),
                x,
                grad,
                mailbox: vec![None; ins.len()],
                tau: vec![0; ins.len()],
                w_in: ins.iter().map(|&j| w[[i, j]]).collect(),
                w_self: w[[i, i]],
                last_update: -1,
            }
        })
        .collect();
    let mut slot_of = vec![vec![None; num]; num];
    for (r, row) in slot_of.iter_mut().enumerate() {
        for (slot, &s) in topology.in_neighbors(r).iter().enumerate() {
            row[s] = Some(slot);
        }
    }

    let mut sim = Sim {
        problem,
        algo,
        opts,
        timing: Timing::new(schedule),
        rng: ChaCha8Rng::seed_from_u64(schedule.seed),
        queue: EventQueue::new(),
        agents,
        slot_of,
        k: 0,
        time: 0.0,
        stats: RunStats {
            min_phi: 1.0,
            max_infeasibility: f64::NEG_INFINITY,
            ..RunStats::default()
        },
        log: EventLog::default(),
        trace: Vec::new(),
    };

    for i in 0..num {
        let v0 = Arc::new(sim.agents[i].x.clone());
        sim.emit(i, v0);
        sim.schedule_compute(i);
    }

    let first = sim.record(None, 0.0)?;
    let mut reason = target_reached(stop, &first);
    let mut last_recorded = 0;
    let mut last_activation = (None, 0.0);

    while reason.is_none() {
        if sim.k >= stop.max_iters {
            reason = Some(StopReason::MaxIters);
            break;
        }
        let (t, event) = sim.queue.pop().expect("every agent always has a pending compute");
        if let Some(limit) = stop.max_sim_time_ms {
            if t > limit {
                reason = Some(StopReason::MaxSimTime);
                break;
            }
        }
        sim.time = t;
        match event {
            Event::Arrival(p) => sim.deliver(*p),
            Event::Compute { agent } => {
                let on_row = (sim.k + 1).is_multiple_of(opts.trace_every);
                let delta = sim.activate(agent, on_row && opts.check_residual_bound)?;
                last_activation = (Some(agent), delta);
                if on_row {
                    let row = sim.record(Some(agent), delta)?;
                    last_recorded = sim.k;
                    reason = target_reached(stop, &row);
                } else if opts.audit_every > 0 && sim.k.is_multiple_of(opts.audit_every) {
                    sim.audit();
                }
            }
        }
    }

    if last_recorded != sim.k {
        sim.record(last_activation.0, last_activation.1)?;
    }
    let k = sim.k;
    for a in &sim.agents {
        sim.stats.max_gap_obs = sim.stats.max_gap_obs.max((k as i64 - a.last_update) as u64);
    }
    sim.stats.iterations = k;
    sim.stats.sim_time_ms = sim.time;
    sim.stats.max_infeasibility = sim.stats.max_infeasibility.max(0.0);
    Ok(RunOutput {
        xs: sim.agents.iter().map(|a| a.x.clone()).collect(),
        ys: sim.agents.iter().map(|a| a.tracking.y().clone()).collect(),
        trace: sim.trace,
        stats: sim.stats,
        stop: reason.expect("loop exits with a reason"),
    })
}
