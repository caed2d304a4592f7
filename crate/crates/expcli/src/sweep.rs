//! Cartesian parameter sweeps.

use std::fmt::Write as _;
use std::str::FromStr;

use dsca_core::Execution;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::runner::{execute, Outcome, Overrides, RunArtifacts};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Axis {
    Gamma(Vec<f64>),
    Mu(Vec<f64>),
    /// Offsets added to the root schedule seed.
    Seed(Vec<u64>),
    DTv(Vec<f64>),
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::Gamma(_) => "gamma",
            Axis::Mu(_) => "mu",
            Axis::Seed(_) => "seed",
            Axis::DTv(_) => "d_tv",
        }
    }

    fn len(&self) -> usize {
        match self {
            Axis::Gamma(v) | Axis::Mu(v) | Axis::DTv(v) => v.len(),
            Axis::Seed(v) => v.len(),
        }
    }
}

fn parse_list<T: FromStr>(name: &str, values: &str) -> Result<Vec<T>, CliError> {
    values
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Config(format!("axis {name}: cannot parse `{s}`"))))
        .collect()
}

impl FromStr for Axis {
    type Err = CliError;

    /// `gamma=0.004,0.008`, `mu=1,10`, `d_tv=0,10,30`, `seed=0,1,2` or `seed=0..5`.
    fn from_str(s: &str) -> Result<Self, CliError> {
        let (name, values) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("axis `{s}`: expected NAME=V1,V2,...")))?;
        let name = name.trim();
        let axis = match name {
            "gamma" => Axis::Gamma(parse_list(name, values)?),
            "mu" => Axis::Mu(parse_list(name, values)?),
            "d_tv" => Axis::DTv(parse_list(name, values)?),
            "seed" => match values.split_once("..") {
                Some((a, b)) => {
                    let lo: u64 = a.trim().parse().map_err(|_| CliError::Config(format!("axis seed: bad range `{values}`")))?;
                    let hi: u64 = b.trim().parse().map_err(|_| CliError::Config(format!("axis seed: bad range `{values}`")))?;
                    Axis::Seed((lo..hi).collect())
                }
                None => Axis::Seed(parse_list(name, values)?),
            },
            other => {
                return Err(CliError::Config(format!("unknown sweep axis `{other}` (gamma, mu, seed, d_tv)")));
            }
        };
        if axis.len() == 0 {
            return Err(CliError::Config(format!("sweep axis `{name}` is empty")));
        }
        Ok(axis)
    }
}

/// One overrides set per grid point, last axis varying fastest.
pub fn expand(base: &Overrides, root_seed: u64, axes: &[Axis]) -> Result<Vec<Overrides>, CliError> {
    if axes.is_empty() {
        return Err(CliError::Config("sweep needs at least one --axis".into()));
    }
    for (i, a) in axes.iter().enumerate() {
        if axes[..i].iter().any(|b| b.name() == a.name()) {
            return Err(CliError::Config(format!("sweep axis `{}` given twice", a.name())));
        }
        if a.len() == 0 {
            return Err(CliError::Config(format!("sweep axis `{}` is empty", a.name())));
        }
    }
    let mut points = vec![base.clone()];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.len());
        for p in &points {
            for idx in 0..axis.len() {
                let mut q = p.clone();
                match axis {
                    Axis::Gamma(v) => q.gamma = Some(v[idx]),
                    Axis::Mu(v) => q.mu = Some(v[idx]),
                    Axis::DTv(v) => q.d_tv = Some(v[idx]),
                    Axis::Seed(v) => q.schedule_seed = Some(root_seed.wrapping_add(v[idx])),
                }
                next.push(q);
            }
        }
        points = next;
    }
    Ok(points)
}

#[derive(Debug)]
pub struct SweepPoint {
    pub overrides: Overrides,
    pub result: Result<RunArtifacts, CliError>,
}

pub struct SweepReport {
    pub points: Vec<SweepPoint>,
}

pub const AGGREGATE_HEADER: &str =
    "point,gamma,mu,schedule_seed,d_tv,outcome,stop_reason,iterations,final_u_gap,final_merit,rate_lambda,rate_r_squared,error";

/// Runs every point; failures are recorded and the sweep carries on.
pub fn run_sweep(cfg: &ExperimentConfig, base: &Overrides, axes: &[Axis], exec: Execution) -> Result<SweepReport, CliError> {
    let root = base.schedule_seed.unwrap_or(cfg.algorithm.schedule.seed);
    let grid = expand(base, root, axes)?;
    // points run side by side, each one sequentially inside
    let results = exec.map(grid.len(), |i| execute(cfg, &grid[i], Some(Execution::Sequential)));
    Ok(SweepReport {
        points: grid
            .into_iter()
            .zip(results)
            .map(|(overrides, result)| SweepPoint { overrides, result })
            .collect(),
    })
}

fn num(v: &Value) -> String {
    v.as_f64().map(|x| format!("{x:e}")).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl SweepReport {
    pub fn aggregate_csv(&self, cfg: &ExperimentConfig) -> String {
        let mut out = String::new();
        writeln!(out, "{AGGREGATE_HEADER}").unwrap();
        for (i, p) in self.points.iter().enumerate() {
            let o = &p.overrides;
            let gamma = o.gamma.unwrap_or(cfg.algorithm.gamma);
            let mu = o.mu.unwrap_or(cfg.algorithm.mu);
            let seed = o.schedule_seed.unwrap_or(cfg.algorithm.schedule.seed);
            let d_tv = o.d_tv.unwrap_or(cfg.algorithm.schedule.d_tv);
            let cols = match &p.result {
                Ok(a) => {
                    let s = &a.summary;
                    let err = match &a.outcome {
                        Outcome::Completed => String::new(),
                        Outcome::InvariantBreach(v) => v.join("; "),
                        Outcome::Diverged(msg) => msg.lines().next().unwrap_or("").to_string(),
                    };
                    [
                        a.outcome.label().to_string(),
                        s["stop_reason"].as_str().unwrap_or("").to_string(),
                        s["stats"]["iterations"].as_u64().map(|k| k.to_string()).unwrap_or_default(),
                        num(&s["final"]["u_gap"]),
                        num(&s["final"]["merit"]),
                        num(&s["rate_fit"]["lambda"]),
                        num(&s["rate_fit"]["r_squared"]),
                        err,
                    ]
                }
                Err(e) => [
                    "error".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    e.to_string(),
                ],
            };
            let cols: Vec<String> = cols.iter().map(|c| csv_field(c)).collect();
            writeln!(out, "{i},{gamma:e},{mu:e},{seed},{d_tv:e},{}", cols.join(",")).unwrap();
        }
        out
    }

    /// Worst exit code over the points; divergence is a result, not a failure.
    pub fn exit_code(&self) -> u8 {
        self.points
            .iter()
            .map(|p| match &p.result {
                Ok(a) => match a.outcome {
                    Outcome::InvariantBreach(_) => 3,
                    _ => 0,
                },
                Err(e) => e.exit_code(),
            })
            .max()
            .unwrap_or(0)
    }

    pub fn point_json(&self, i: usize) -> Value {
        json!({ "point": i, "overrides": self.points[i].overrides })
    }
}
