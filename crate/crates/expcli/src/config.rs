//! TOML experiment configuration.
//!
//! ```toml
//! [problem]
//! family = "lasso"
//! seed = 1
//! [problem.params]
//! lambda = 2.0
//!
//! [graph]
//! kind = "directed_ring_plus"
//! agents = 20
//! extra_out = 9
//! seed = 1
//!
//! [algorithm]
//! mode = "async"
//! surrogate = "linearized"
//! mu = 10.0
//! gamma = 0.01
//! [algorithm.schedule]
//! p_min = 5.0
//! p_max = 15.0
//! d_tv = 30.0
//! seed = 1
//! [algorithm.stop]
//! max_iters = 200000
//! ```
//!
//! Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use dsca_core::engine::{Schedule, StopRule};
use dsca_core::localsolve::SurrogateKind;
use dsca_core::metrics::FitWindow;
use dsca_core::netgraph::{gen_directed_ring_plus, gen_erdos_renyi, NetworkTopology};
use dsca_core::objective::{
    make_lasso, make_logistic, make_mestimator, LassoParams, LogisticParams, MEstimatorParams, ProblemInstance,
};
use dsca_core::trace::TraceQuantity;
use dsca_core::Execution;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemBlock,
    pub graph: GraphBlock,
    pub algorithm: AlgorithmBlock,
    #[serde(default)]
    pub metrics: MetricsBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Lasso,
    Logistic,
    MEstimator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub family: Family,
    #[serde(default)]
    pub seed: u64,
    /// Generator parameters of `family`; omitted keys take the generator defaults.
    #[serde(default)]
    pub params: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphBlock {
    DirectedRingPlus {
        agents: usize,
        extra_out: usize,
        #[serde(default)]
        seed: u64,
    },
    ErdosRenyi {
        agents: usize,
        p: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl GraphBlock {
    pub fn agents(&self) -> usize {
        match *self {
            GraphBlock::DirectedRingPlus { agents, .. } | GraphBlock::ErdosRenyi { agents, .. } => agents,
        }
    }

    pub fn seed(&self) -> u64 {
        match *self {
            GraphBlock::DirectedRingPlus { seed, .. } | GraphBlock::ErdosRenyi { seed, .. } => seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Async,
    Sync,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmBlock {
    pub mode: Mode,
    pub surrogate: SurrogateKind,
    pub mu: f64,
    pub gamma: f64,
    #[serde(default)]
    pub schedule: Schedule,
    pub stop: StopRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsBlock {
    /// Solve for `U*`; defaults to on for convex families.
    pub reference: Option<bool>,
    pub reference_tol: f64,
    pub reference_max_iters: usize,
    /// Levels for the merit hitting times `T_delta`.
    pub deltas: Vec<f64>,
    /// Defaults to `u_gap` when a reference is available, `merit` otherwise.
    pub rate_quantity: Option<TraceQuantity>,
    pub rate_window: FitWindow,
    pub trace_every: u64,
    pub audit_every: u64,
    pub check_residual_bound: bool,
    pub execution: Execution,
}

impl Default for MetricsBlock {
    fn default() -> Self {
        Self {
            reference: None,
            reference_tol: 1e-11,
            reference_max_iters: 500_000,
            deltas: vec![1e-2, 1e-3, 1e-4],
            rate_quantity: None,
            rate_window: FitWindow::All,
            trace_every: 10,
            audit_every: 0,
            check_residual_bound: false,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: PathBuf,
    /// File stem for outputs; defaults to the config file stem.
    pub name: Option<String>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            name: None,
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config, filling `output.name` from the file stem.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if cfg.output.name.is_none() {
            cfg.output.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(cfg)
    }

    pub fn name(&self) -> &str {
        self.output.name.as_deref().unwrap_or("run")
    }

    /// Range checks that serde cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        self.problem_spec()?;
        match self.graph {
            GraphBlock::DirectedRingPlus { agents, extra_out, .. } => {
                if agents < 2 {
                    return Err(invalid("graph.agents", "need at least 2 agents"));
                }
                if extra_out + 2 > agents {
                    return Err(invalid("graph.extra_out", format!("{extra_out} exceeds agents - 2")));
                }
            }
            GraphBlock::ErdosRenyi { agents, p, .. } => {
                if agents < 2 {
                    return Err(invalid("graph.agents", "need at least 2 agents"));
                }
                if !(p > 0.0 && p <= 1.0) {
                    return Err(invalid("graph.p", format!("{p} not in (0, 1]")));
                }
            }
        }
        let a = &self.algorithm;
        if !(a.mu > 0.0 && a.mu.is_finite()) {
            return Err(invalid("algorithm.mu", format!("{} must be positive", a.mu)));
        }
        if !(0.0..=1.0).contains(&a.gamma) {
            return Err(invalid("algorithm.gamma", format!("{} not in [0, 1]", a.gamma)));
        }
        a.schedule
            .validate()
            .map_err(|e| invalid("algorithm.schedule", e))?;
        if a.stop.max_iters == 0 {
            return Err(invalid("algorithm.stop.max_iters", "must be positive"));
        }
        let m = &self.metrics;
        if !(m.reference_tol > 0.0) {
            return Err(invalid("metrics.reference_tol", "must be positive"));
        }
        if m.deltas.iter().any(|&d| !(d > 0.0)) {
            return Err(invalid("metrics.deltas", "levels must be positive"));
        }
        if m.trace_every == 0 {
            return Err(invalid("metrics.trace_every", "must be positive"));
        }
        if self.family() == Family::MEstimator && m.rate_quantity == Some(TraceQuantity::UGap) && m.reference != Some(true) {
            return Err(invalid("metrics.rate_quantity", "u_gap needs a reference value"));
        }
        Ok(())
    }

    pub fn family(&self) -> Family {
        self.problem.family
    }

    /// Typed generator parameters with the block seed and agent count applied.
    pub fn problem_spec(&self) -> Result<ProblemSpec, CliError> {
        let mut table = self.problem.params.clone();
        if table.contains_key("seed") {
            return Err(invalid("problem.params.seed", "set the seed in [problem]"));
        }
        let agents = self.graph.agents();
        match table.get("num_agents") {
            None => {
                table.insert("num_agents".into(), toml::Value::Integer(agents as i64));
            }
            Some(v) if v.as_integer() != Some(agents as i64) => {
                return Err(invalid("problem.params.num_agents", format!("{v} differs from graph.agents = {agents}")));
            }
            Some(_) => {}
        }
        table.insert("seed".into(), toml::Value::Integer(self.problem.seed as i64));
        let parse_err = |e: toml::de::Error| invalid("problem.params", e.message().trim());
        Ok(match self.problem.family {
            Family::Lasso => ProblemSpec::Lasso(table.try_into().map_err(parse_err)?),
            Family::Logistic => ProblemSpec::Logistic(table.try_into().map_err(parse_err)?),
            Family::MEstimator => ProblemSpec::MEstimator(table.try_into().map_err(parse_err)?),
        })
    }

    pub fn build_problem(&self) -> Result<ProblemInstance, CliError> {
        let built = match self.problem_spec()? {
            ProblemSpec::Lasso(p) => make_lasso(&p),
            ProblemSpec::Logistic(p) => make_logistic(&p),
            ProblemSpec::MEstimator(p) => make_mestimator(&p),
        };
        built.map(|(p, _)| p).map_err(|e| invalid("problem", e))
    }

    pub fn build_topology(&self) -> Result<NetworkTopology, CliError> {
        let built = match self.graph {
            GraphBlock::DirectedRingPlus { agents, extra_out, seed } => gen_directed_ring_plus(agents, extra_out, seed),
            GraphBlock::ErdosRenyi { agents, p, seed } => gen_erdos_renyi(agents, p, seed),
        };
        built.map_err(|e| invalid("graph", e))
    }

    pub fn wants_reference(&self) -> bool {
        self.metrics.reference.unwrap_or(self.family() != Family::MEstimator)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Lasso(LassoParams),
    Logistic(LogisticParams),
    MEstimator(MEstimatorParams),
}
