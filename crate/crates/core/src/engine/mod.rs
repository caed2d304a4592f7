//! Discrete-event simulator for the asynchronous method and a synchronous runner.

mod asynchronous;
mod queue;
mod synchronous;

pub use asynchronous::run_async;
pub use queue::{Event, EventQueue, Packet};
pub use synchronous::run_sync;

use std::collections::VecDeque;
use std::fmt;

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::localsolve::{check_supported, SolveError, SurrogateSpec};
use crate::metrics;
use crate::netgraph::{GraphError, NetworkTopology};
use crate::objective::{norm, ProblemInstance};
use crate::trace::TraceRecord;
use crate::tracking::{ProtocolFaults, TrackingError};

/// Number of events kept for the dump attached to a fatal error.
pub const EVENT_LOG_LEN: usize = 100;

/// Slack allowed on `||x|| <= radius` after a consensus step.
pub const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Topology(#[from] GraphError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error("non-finite state at iteration {k} (agent {agent}); last events:\n{}", format_events(.recent))]
    NonFinite {
        k: u64,
        agent: usize,
        recent: Vec<LoggedEvent>,
    },
}

fn format_events(events: &[LoggedEvent]) -> String {
    events.iter().map(|e| format!("  {e}\n")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoggedEvent {
    Arrival {
        time: f64,
        sender: usize,
        receiver: usize,
        generation: u64,
    },
    Compute { time: f64, agent: usize, k: u64 },
    Round { time: f64, k: u64 },
}

impl fmt::Display for LoggedEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LoggedEvent::Arrival {
                time,
                sender,
                receiver,
                generation,
            } => write!(f, "t={time:.6} arrival {sender}->{receiver} gen {generation}"),
            LoggedEvent::Compute { time, agent, k } => write!(f, "t={time:.6} compute agent {agent} k={k}"),
            LoggedEvent::Round { time, k } => write!(f, "t={time:.6} round k={k}"),
        }
    }
}

#[derive(Debug, Default)]
pub(crate) struct EventLog(VecDeque<LoggedEvent>);

impl EventLog {
    pub(crate) fn push(&mut self, e: LoggedEvent) {
        if self.0.len() == EVENT_LOG_LEN {
            self.0.pop_front();
        }
        self.0.push_back(e);
    }

    pub(crate) fn snapshot(&self) -> Vec<LoggedEvent> {
        self.0.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmParams {
    pub surrogate: SurrogateSpec,
    /// Relaxation step in `[0, 1]`; zero freezes every `x_i`.
    pub gamma: f64,
}

/// Timing model: compute durations `U[p_min, p_max]` ms, transit times
/// exponential with mean `d_tv` ms. `d_tv = 0` delivers instantly, and with
/// `p_min = p_max` the agents then update in round-robin order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub p_min: f64,
    pub p_max: f64,
    pub d_tv: f64,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            p_min: 5.0,
            p_max: 15.0,
            d_tv: 30.0,
            seed: 0,
        }
    }
}

impl Schedule {
    pub fn round_robin(seed: u64) -> Self {
        Self {
            p_min: 10.0,
            p_max: 10.0,
            d_tv: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.p_min > 0.0 && self.p_min <= self.p_max && self.p_max.is_finite()) {
            return Err(EngineError::InvalidParameter(format!(
                "need 0 < p_min <= p_max, got p_min={} p_max={}",
                self.p_min, self.p_max
            )));
        }
        if !(self.d_tv >= 0.0 && self.d_tv.is_finite()) {
            return Err(EngineError::InvalidParameter(format!("d_tv must be >= 0, got {}", self.d_tv)));
        }
        Ok(())
    }
}

pub(crate) struct Timing {
    p_min: f64,
    p_max: f64,
    transit: Option<Exp<f64>>,
}

impl Timing {
    pub(crate) fn new(s: &Schedule) -> Self {
        Self {
            p_min: s.p_min,
            p_max: s.p_max,
            transit: (s.d_tv > 0.0).then(|| Exp::new(1.0 / s.d_tv).expect("positive rate")),
        }
    }

    pub(crate) fn compute(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.p_min == self.p_max {
            self.p_min
        } else {
            rng.random_range(self.p_min..=self.p_max)
        }
    }

    pub(crate) fn transit(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.transit.map_or(0.0, |d| d.sample(rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    pub max_iters: u64,
    #[serde(default)]
    pub max_sim_time_ms: Option<f64>,
    /// Stop once `U_gap` drops to this level (needs a reference value).
    #[serde(default)]
    pub target_gap: Option<f64>,
    #[serde(default)]
    pub target_merit: Option<f64>,
}

impl StopRule {
    pub fn iterations(max_iters: u64) -> Self {
        Self {
            max_iters,
            max_sim_time_ms: None,
            target_gap: None,
            target_merit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetGap,
    TargetMerit,
    MaxIters,
    MaxSimTime,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// A trace row every this many global iterations (the first and last are always kept).
    pub trace_every: u64,
    /// Mass audit every this many iterations; 0 audits only on trace rows.
    pub audit_every: u64,
    /// Reference optimum for `U_gap`.
    pub u_star: Option<f64>,
    /// Evaluate the residual bound for the acting agent on every trace row.
    pub check_residual_bound: bool,
    /// Fan-out for metric evaluation and synchronous per-agent steps.
    pub exec: Execution,
    pub faults: ProtocolFaults,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            trace_every: 1,
            audit_every: 0,
            u_star: None,
            check_residual_bound: false,
            exec: Execution::default(),
            faults: ProtocolFaults::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub iterations: u64,
    pub sim_time_ms: f64,
    /// Largest `k - tau` over all consumed information.
    pub max_delay_obs: u64,
    /// Largest number of global iterations between two updates of one agent.
    pub max_gap_obs: u64,
    pub audits: u64,
    pub max_mass_gap_z: f64,
    pub max_mass_gap_phi: f64,
    pub min_phi: f64,
    /// Largest `||x_i|| - radius` seen after a consensus step.
    pub max_infeasibility: f64,
    pub residual_bound_checks: u64,
    pub residual_bound_violations: u64,
    pub packets_sent: u64,
    pub packets_discarded: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub xs: Vec<Array1<f64>>,
    pub ys: Vec<Array1<f64>>,
    pub trace: Vec<TraceRecord>,
    pub stats: RunStats,
    pub stop: StopReason,
}

pub(crate) fn validate_inputs(
    problem: &ProblemInstance,
    topology: &NetworkTopology,
    algo: &AlgorithmParams,
    schedule: &Schedule,
    opts: &RunOptions,
) -> Result<(), EngineError> {
    let num = topology.num_agents();
    if num < 2 {
        return Err(EngineError::InvalidParameter(format!("need at least 2 agents, got {num}")));
    }
    if problem.num_agents() != num {
        return Err(EngineError::InvalidParameter(format!(
            "problem has {} agents but topology has {num}",
            problem.num_agents()
        )));
    }
    if !(0.0..=1.0).contains(&algo.gamma) {
        return Err(EngineError::InvalidParameter(format!("gamma must lie in [0, 1], got {}", algo.gamma)));
    }
    if opts.trace_every == 0 {
        return Err(EngineError::InvalidParameter("trace_every must be positive".into()));
    }
    topology.check()?;
    schedule.validate()?;
    check_supported(algo.surrogate.kind, problem.regularizer(), &problem.constraint())?;
    Ok(())
}

pub(crate) fn all_finite(v: &Array1<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Everything a trace row needs besides the mass gaps and bookkeeping counters.
pub(crate) struct RowInputs<'a> {
    pub k: u64,
    pub time: f64,
    pub agent: Option<usize>,
    pub xs: &'a [Array1<f64>],
    pub ys: &'a [Array1<f64>],
    pub grads: &'a [Array1<f64>],
    pub delta: f64,
    pub mass_gap_z: f64,
    pub mass_gap_phi: f64,
    pub max_delay_obs: u64,
    pub max_gap_obs: u64,
}

pub(crate) fn build_row(problem: &ProblemInstance, opts: &RunOptions, r: RowInputs<'_>) -> Result<TraceRecord, EngineError> {
    let (u_mean, _) = metrics::mean_objective(problem, r.xs, opts.exec);
    let merit = metrics::merit(problem, r.xs, opts.exec)?;
    let gbar = metrics::mean(r.grads);
    let errs: Vec<f64> = r.ys.iter().map(|y| norm((y - &gbar).view())).collect();
    let err_max = errs.iter().copied().fold(0.0, f64::max);
    let num = r.xs.len() as f64;
    let (tracking_err, grad_tracking_gap) = match r.agent {
        Some(i) => {
            let g = metrics::full_gradient(problem, r.xs[i].view(), opts.exec);
            let d = &r.ys[i] * num - g;
            (errs[i], d.dot(&d))
        }
        None => {
            let gaps = opts.exec.map(r.xs.len(), |i| {
                let g = metrics::full_gradient(problem, r.xs[i].view(), Execution::Sequential);
                let d = &r.ys[i] * num - g;
                d.dot(&d)
            });
            (err_max, gaps.into_iter().fold(0.0, f64::max))
        }
    };
    Ok(TraceRecord {
        k: r.k,
        sim_time_ms: r.time,
        agent: r.agent,
        u_mean,
        u_gap: opts.u_star.map(|u| u_mean - u),
        merit,
        consensus_err: metrics::consensus_error(r.xs),
        tracking_err,
        tracking_err_max: err_max,
        grad_tracking_gap,
        delta_norm: r.delta,
        mass_gap_z: r.mass_gap_z,
        mass_gap_phi: r.mass_gap_phi,
        max_delay_obs: r.max_delay_obs,
        max_gap_obs: r.max_gap_obs,
    })
}

pub(crate) fn target_reached(stop: &StopRule, row: &TraceRecord) -> Option<StopReason> {
    if let (Some(t), Some(g)) = (stop.target_gap, row.u_gap) {
        if g <= t {
            return Some(StopReason::TargetGap);
        }
    }
    match stop.target_merit {
        Some(t) if row.merit <= t => Some(StopReason::TargetMerit),
        _ => None,
    }
}

/// Relative slack on the residual bound to absorb rounding.
const BOUND_SLACK: f64 = 1e-9;

pub(crate) fn residual_bound_holds(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs * (1.0 + BOUND_SLACK) + 1e-24
}
