//! One experiment: build, solve the reference, simulate, summarize.

use dsca_core::engine::{run_async, run_sync, AlgorithmParams, EngineError, RunOptions, RunOutput, StopReason};
use dsca_core::localsolve::SurrogateSpec;
use dsca_core::metrics::{fit_rate, hitting_times, solve_reference, ReferenceOptions, ReferenceSolution};
use dsca_core::trace::{write_csv, TraceQuantity};
use dsca_core::tracking::AUDIT_TOL;
use dsca_core::Execution;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Mode};
use crate::CliError;

/// Largest tolerated `||x_i|| - radius`.
pub const FEASIBILITY_TOL: f64 = 1e-12;

/// Command-line and sweep adjustments layered on a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_tv: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, base: &ExperimentConfig) -> Result<ExperimentConfig, CliError> {
        let mut cfg = base.clone();
        let a = &mut cfg.algorithm;
        if let Some(s) = self.schedule_seed {
            a.schedule.seed = s;
        }
        if let Some(n) = self.max_iters {
            a.stop.max_iters = n;
        }
        if let Some(g) = self.gamma {
            a.gamma = g;
        }
        if let Some(m) = self.mu {
            a.mu = m;
        }
        if let Some(d) = self.d_tv {
            a.schedule.d_tv = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Completed,
    /// The run finished but an audit failed.
    InvariantBreach(Vec<String>),
    /// A non-finite iterate stopped the run.
    Diverged(String),
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::InvariantBreach(_) => "invariant_breach",
            Outcome::Diverged(_) => "diverged",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub trace_csv: Vec<u8>,
    pub summary: Value,
    pub outcome: Outcome,
}

fn reference_json(r: &ReferenceSolution) -> Value {
    json!({
        "u_star": r.u_star,
        "kkt_residual": r.kkt_residual,
        "iterations": r.iterations,
        "certified": r.certified,
    })
}

fn stop_label(s: StopReason) -> &'static str {
    match s {
        StopReason::TargetGap => "target_gap",
        StopReason::TargetMerit => "target_merit",
        StopReason::MaxIters => "max_iters",
        StopReason::MaxSimTime => "max_sim_time",
    }
}

/// Runs `base` with `ov` applied. `exec` overrides the config's execution
/// mode (sweeps run points in parallel and each point sequentially).
pub fn execute(base: &ExperimentConfig, ov: &Overrides, exec: Option<Execution>) -> Result<RunArtifacts, CliError> {
    let cfg = ov.apply(base)?;
    let exec = exec.unwrap_or(cfg.metrics.execution);
    let problem = cfg.build_problem()?;
    let topology = cfg.build_topology()?;

    let reference = if cfg.wants_reference() {
        Some(solve_reference(
            &problem,
            &ReferenceOptions {
                tol: cfg.metrics.reference_tol,
                max_iters: cfg.metrics.reference_max_iters,
                warm_start: None,
                exec,
            },
        )?)
    } else {
        None
    };
    let u_star = reference.as_ref().filter(|r| r.certified).map(|r| r.u_star);

    let a = &cfg.algorithm;
    let algo = AlgorithmParams {
        surrogate: SurrogateSpec::new(a.surrogate, a.mu).map_err(|e| CliError::Config(format!("algorithm.mu: {e}")))?,
        gamma: a.gamma,
    };
    let opts = RunOptions {
        trace_every: cfg.metrics.trace_every,
        audit_every: cfg.metrics.audit_every,
        u_star,
        check_residual_bound: cfg.metrics.check_residual_bound,
        exec,
        faults: Default::default(),
    };
    let result = match a.mode {
        Mode::Async => run_async(&problem, &topology, &algo, &a.schedule, &a.stop, &opts),
        Mode::Sync => run_sync(&problem, &topology, &algo, &a.schedule, &a.stop, &opts),
    };

    let mut summary = json!({
        "name": cfg.name(),
        "config": base,
        "overrides": ov,
        "seeds": {
            "problem": cfg.problem.seed,
            "graph": cfg.graph.seed(),
            "schedule": cfg.algorithm.schedule.seed,
        },
        "graph": {
            "agents": topology.num_agents(),
            "edges": topology.num_edges(),
            "resamples": topology.resamples(),
        },
        "reference": reference.as_ref().map(reference_json),
    });

    let out = match result {
        Ok(out) => out,
        Err(err @ EngineError::NonFinite { .. }) => {
            let msg = err.to_string();
            summary["outcome"] = json!("diverged");
            summary["diverged"] = json!(true);
            summary["error"] = json!(msg);
            let mut trace_csv = Vec::new();
            write_csv(&mut trace_csv, &[]).expect("writing to memory");
            return Ok(RunArtifacts {
                trace_csv,
                summary,
                outcome: Outcome::Diverged(msg),
            });
        }
        Err(err @ EngineError::Tracking(_)) => return Err(CliError::Invariant(err.to_string())),
        Err(err) => return Err(CliError::Config(err.to_string())),
    };

    let breaches = audit_breaches(&out);
    let outcome = if breaches.is_empty() {
        Outcome::Completed
    } else {
        Outcome::InvariantBreach(breaches.clone())
    };
    summarize(&cfg, &out, u_star.is_some(), &mut summary);
    summary["outcome"] = json!(outcome.label());
    summary["diverged"] = json!(false);
    summary["error"] = if breaches.is_empty() { Value::Null } else { json!(breaches.join("; ")) };

    let mut trace_csv = Vec::new();
    write_csv(&mut trace_csv, &out.trace).expect("writing to memory");
    Ok(RunArtifacts {
        trace_csv,
        summary,
        outcome,
    })
}

fn audit_breaches(out: &RunOutput) -> Vec<String> {
    let s = &out.stats;
    let mut v = Vec::new();
    if s.max_mass_gap_z > AUDIT_TOL || s.max_mass_gap_phi > AUDIT_TOL {
        v.push(format!(
            "mass conservation: z gap {:e}, phi gap {:e} > {AUDIT_TOL:e}",
            s.max_mass_gap_z, s.max_mass_gap_phi
        ));
    }
    if s.residual_bound_violations > 0 {
        v.push(format!(
            "residual bound violated on {} of {} rows",
            s.residual_bound_violations, s.residual_bound_checks
        ));
    }
    if s.max_infeasibility > FEASIBILITY_TOL {
        v.push(format!("iterate left the feasible set by {:e}", s.max_infeasibility));
    }
    v
}

fn summarize(cfg: &ExperimentConfig, out: &RunOutput, has_gap: bool, summary: &mut Value) {
    let s = &out.stats;
    let quantity = cfg
        .metrics
        .rate_quantity
        .unwrap_or(if has_gap { TraceQuantity::UGap } else { TraceQuantity::Merit });
    let rate_fit = match fit_rate(&out.trace, quantity, cfg.metrics.rate_window) {
        Ok(fit) => serde_json::to_value(fit).expect("plain data"),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let t_delta: Vec<Value> = cfg
        .metrics
        .deltas
        .iter()
        .zip(hitting_times(&out.trace, TraceQuantity::Merit, &cfg.metrics.deltas))
        .map(|(d, k)| json!({ "delta": d, "k": k }))
        .collect();
    summary["stop_reason"] = json!(stop_label(out.stop));
    summary["stats"] = serde_json::to_value(s).expect("plain data");
    summary["final"] = serde_json::to_value(out.trace.last()).expect("plain data");
    summary["rate_quantity"] = serde_json::to_value(quantity).expect("plain data");
    summary["rate_fit"] = rate_fit;
    summary["t_delta"] = json!(t_delta);
    summary["audits"] = json!({
        "mass_conservation": {
            "pass": s.max_mass_gap_z <= AUDIT_TOL && s.max_mass_gap_phi <= AUDIT_TOL,
            "audits": s.audits,
            "max_z_gap": s.max_mass_gap_z,
            "max_phi_gap": s.max_mass_gap_phi,
            "min_phi": s.min_phi,
        },
        "residual_bound": {
            "pass": s.residual_bound_violations == 0,
            "checks": s.residual_bound_checks,
            "violations": s.residual_bound_violations,
        },
        "feasibility": {
            "pass": s.max_infeasibility <= FEASIBILITY_TOL,
            "max_violation": s.max_infeasibility,
        },
    });
}
