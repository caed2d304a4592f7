//! Least-squares fits of `log10(quantity)` against the iteration counter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{TraceQuantity, TraceRecord};

/// Fewest points a fit is allowed to use.
pub const MIN_FIT_POINTS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum RateError {
    #[error("only {points} usable points in the fit window, need {MIN_FIT_POINTS}")]
    TooFewPoints { points: usize },
    #[error("the trace never reaches {0:e}")]
    WindowNotReached(f64),
    #[error("quantity {0:?} is absent from the trace")]
    MissingQuantity(TraceQuantity),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitWindow {
    /// Rows with `start <= k <= end`.
    Iterations { start: u64, end: u64 },
    /// From the first row at or below `upper` to the first row at or below `lower`.
    Decades { upper: f64, lower: f64 },
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub k_start: u64,
    pub k_end: u64,
    pub points: usize,
    /// Slope of `log10(q)` per iteration.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Per-iteration contraction factor `10^slope`.
    pub lambda: f64,
}

/// Ordinary least squares of `log10(v)` on `k`; non-positive and non-finite values are skipped.
pub fn fit_log_linear(points: &[(u64, f64)]) -> Result<RateFit, RateError> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, v)| v.is_finite() && *v > 0.0)
        .map(|&(k, v)| (k as f64, v.log10()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(RateError::TooFewPoints { points: pts.len() });
    }
    let m = pts.len() as f64;
    let kx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ky = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - kx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - kx) * (p.1 - ky)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ky).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = ky - slope * kx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(RateFit {
        k_start: pts[0].0 as u64,
        k_end: pts[pts.len() - 1].0 as u64,
        points: pts.len(),
        slope,
        intercept,
        r_squared,
        lambda: 10f64.powf(slope),
    })
}

fn first_at_or_below(series: &[(u64, f64)], level: f64) -> Option<usize> {
    series.iter().position(|&(_, v)| v <= level)
}

pub fn fit_rate(trace: &[TraceRecord], quantity: TraceQuantity, window: FitWindow) -> Result<RateFit, RateError> {
    let series: Vec<(u64, f64)> = trace
        .iter()
        .filter_map(|r| r.quantity(quantity).map(|v| (r.k, v)))
        .collect();
    if series.is_empty() && !trace.is_empty() {
        return Err(RateError::MissingQuantity(quantity));
    }
    let slice: &[(u64, f64)] = match window {
        FitWindow::All => &series,
        FitWindow::Iterations { start, end } => {
            let lo = series.partition_point(|p| p.0 < start);
            let hi = series.partition_point(|p| p.0 <= end);
            &series[lo..hi.max(lo)]
        }
        FitWindow::Decades { upper, lower } => {
            let lo = first_at_or_below(&series, upper).ok_or(RateError::WindowNotReached(upper))?;
            let hi = first_at_or_below(&series, lower).ok_or(RateError::WindowNotReached(lower))?;
            &series[lo..=hi.max(lo)]
        }
    };
    fit_log_linear(slice)
}

/// `T_delta`: the first `k` at which the running minimum of `quantity` is at most `delta`.
pub fn hitting_times(trace: &[TraceRecord], quantity: TraceQuantity, deltas: &[f64]) -> Vec<Option<u64>> {
    deltas
        .iter()
        .map(|&d| {
            trace
                .iter()
                .find(|r| r.quantity(quantity).is_some_and(|v| v <= d))
                .map(|r| r.k)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_geometric_sequence() {
        let pts: Vec<(u64, f64)> = (0..50).map(|k| (k, 3.0 * 0.9f64.powi(k as i32))).collect();
        let fit = fit_log_linear(&pts).unwrap();
        assert_abs_diff_eq!(fit.lambda, 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn too_few_points() {
        let pts: Vec<(u64, f64)> = (0..5).map(|k| (k, 1.0)).collect();
        assert_eq!(fit_log_linear(&pts), Err(RateError::TooFewPoints { points: 5 }));
    }
}
