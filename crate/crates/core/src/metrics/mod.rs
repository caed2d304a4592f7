//! Optimality measures, diagnostics, reference solutions and rate fits.

mod rate;
mod reference;

pub use rate::{fit_log_linear, fit_rate, hitting_times, FitWindow, RateError, RateFit};
pub use reference::{solve_reference, ReferenceError, ReferenceOptions, ReferenceSolution};

use ndarray::{Array1, ArrayView1};

use crate::exec::Execution;
use crate::localsolve::{prox, SolveError, SurrogateSpec};
use crate::objective::{norm, ProblemInstance};

/// Unweighted mean of the agents' iterates.
pub fn mean(xs: &[Array1<f64>]) -> Array1<f64> {
    let n = xs.first().map_or(0, Array1::len);
    let sum = xs.iter().fold(Array1::zeros(n), |acc, x| acc + x);
    sum / xs.len() as f64
}

/// `grad F(x) = sum_i grad f_i(x)`.
pub fn full_gradient(problem: &ProblemInstance, x: ArrayView1<f64>, exec: Execution) -> Array1<f64> {
    exec.sum_vectors(problem.num_agents(), problem.dimension(), |i| problem.grad_local(i, x))
}

/// `||x - prox_{G+K}(x - grad F(x))||`
pub fn prox_residual(problem: &ProblemInstance, x: ArrayView1<f64>, exec: Execution) -> Result<f64, SolveError> {
    let g = full_gradient(problem, x, exec);
    let p = prox(problem.regularizer(), &problem.constraint(), (&x - &g).view(), 1.0)?;
    Ok(norm((&x - &p).view()))
}

/// `M_F = max(||xbar - prox(xbar - grad F(xbar))||^2, sum_i ||x_i - xbar||^2)`.
pub fn merit(problem: &ProblemInstance, xs: &[Array1<f64>], exec: Execution) -> Result<f64, SolveError> {
    let xbar = mean(xs);
    let stationarity = prox_residual(problem, xbar.view(), exec)?.powi(2);
    let disagreement: f64 = xs.iter().map(|x| (x - &xbar).mapv(|v| v * v).sum()).sum();
    Ok(stationarity.max(disagreement))
}

/// `max_i ||x_i - xbar||`, a computable stand-in for the weighted consensus error.
pub fn consensus_error(xs: &[Array1<f64>]) -> f64 {
    let xbar = mean(xs);
    xs.iter()
        .map(|x| norm((x - &xbar).view()))
        .fold(0.0, f64::max)
}

/// `(1/I) sum_i U(x_i)` and the largest constraint violation among the `x_i`.
pub fn mean_objective(problem: &ProblemInstance, xs: &[Array1<f64>], exec: Execution) -> (f64, f64) {
    let evals = exec.map(xs.len(), |i| problem.eval_u(xs[i].view()));
    let value = evals.iter().map(|e| e.value).sum::<f64>() / xs.len() as f64;
    let violation = evals.iter().map(|e| e.violation).fold(0.0, f64::max);
    (value, violation)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    /// `||x~_i - x_i||`
    pub delta: f64,
    pub consensus_err: f64,
    /// `||y_i - gbar||`
    pub tracking_err: f64,
    /// `max_j ||y_j - gbar||`
    pub tracking_err_max: f64,
    /// `||I y_i - grad F(x_i)||^2`
    pub grad_tracking_gap: f64,
}

/// Error quantities for acting agent `agent`; `local_grads[j] = grad f_j(x_j)`.
pub fn diagnostics(
    problem: &ProblemInstance,
    xs: &[Array1<f64>],
    ys: &[Array1<f64>],
    local_grads: &[Array1<f64>],
    agent: usize,
    delta: f64,
    exec: Execution,
) -> Diagnostics {
    let num = xs.len() as f64;
    let gbar = mean(local_grads);
    let errs: Vec<f64> = ys.iter().map(|y| norm((y - &gbar).view())).collect();
    let grad_f = full_gradient(problem, xs[agent].view(), exec);
    let gap = &ys[agent] * num - grad_f;
    Diagnostics {
        delta,
        consensus_err: consensus_error(xs),
        tracking_err: errs[agent],
        tracking_err_max: errs.iter().copied().fold(0.0, f64::max),
        grad_tracking_gap: gap.dot(&gap),
    }
}

/// Checks `||x - prox(x - grad F(x))||^2 <= 4(1 + (l + l~)^2) delta^2 + 5 gap` at
/// the acting agent's pre-update iterate. Returns `(lhs, rhs)`.
pub fn residual_bound(
    problem: &ProblemInstance,
    spec: &SurrogateSpec,
    x: ArrayView1<f64>,
    delta: f64,
    grad_tracking_gap: f64,
    exec: Execution,
) -> Result<(f64, f64), SolveError> {
    let l = problem.smoothness().l;
    let l_tilde = spec.curvature_bound(l);
    let lhs = prox_residual(problem, x, exec)?.powi(2);
    let rhs = 4.0 * (1.0 + (l + l_tilde).powi(2)) * delta * delta + 5.0 * grad_tracking_gap;
    Ok((lhs, rhs))
}
