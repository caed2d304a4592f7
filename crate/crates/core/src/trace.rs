//! Per-iteration trace rows and their CSV form.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

/// Fixed CSV column order.
pub const CSV_HEADER: &str = "k,sim_time_ms,agent,U_mean,U_gap,merit,consensus_err,tracking_err,delta_norm,mass_gap_z,mass_gap_phi,max_delay_obs,max_gap_obs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Completed global iterations.
    pub k: u64,
    pub sim_time_ms: f64,
    /// Agent that triggered the iteration; `None` for synchronous rounds and the initial row.
    pub agent: Option<usize>,
    /// `(1/I) sum_i U(x_i)`
    pub u_mean: f64,
    /// `u_mean - U*` when a reference value is known.
    pub u_gap: Option<f64>,
    pub merit: f64,
    /// `max_i ||x_i - mean(x)||`
    pub consensus_err: f64,
    /// `||y_i - mean_j grad f_j(x_j)||` for the acting agent (max over agents in sync rounds).
    pub tracking_err: f64,
    /// `max_i ||y_i - mean_j grad f_j(x_j)||`
    pub tracking_err_max: f64,
    /// `||I y_i - grad F(x_i)||^2` for the acting agent.
    pub grad_tracking_gap: f64,
    /// `||x~ - x||` of the acting agent.
    pub delta_norm: f64,
    pub mass_gap_z: f64,
    pub mass_gap_phi: f64,
    pub max_delay_obs: u64,
    pub max_gap_obs: u64,
}

/// Quantities a rate fit can be run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceQuantity {
    UGap,
    Merit,
    ConsensusErr,
    TrackingErr,
    TrackingErrMax,
    DeltaNorm,
}

impl TraceRecord {
    pub fn quantity(&self, q: TraceQuantity) -> Option<f64> {
        match q {
            TraceQuantity::UGap => self.u_gap,
            TraceQuantity::Merit => Some(self.merit),
            TraceQuantity::ConsensusErr => Some(self.consensus_err),
            TraceQuantity::TrackingErr => Some(self.tracking_err),
            TraceQuantity::TrackingErrMax => Some(self.tracking_err_max),
            TraceQuantity::DeltaNorm => Some(self.delta_norm),
        }
    }

    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        format!(
            "{},{:e},{},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
            self.k,
            self.sim_time_ms,
            self.agent.map(|a| a.to_string()).unwrap_or_default(),
            self.u_mean,
            opt(self.u_gap),
            self.merit,
            self.consensus_err,
            self.tracking_err,
            self.delta_norm,
            self.mass_gap_z,
            self.mass_gap_phi,
            self.max_delay_obs,
            self.max_gap_obs,
        )
    }
}

pub fn write_csv<W: Write>(mut out: W, rows: &[TraceRecord]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.csv_line())?;
    }
    Ok(())
}
