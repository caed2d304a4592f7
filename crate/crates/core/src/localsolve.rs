//! Closed-form local subproblems and proximal operators.
//!
//! The agent subproblem minimizes, over `K`,
//!
//! ```text
//! f~(x; xc) + (I y - grad f_i(xc))^T (x - xc) + G(x)
//! ```
//!
//! For both supported surrogates the smooth part is separable with per-coordinate
//! curvature `q_j` (`mu` for the linearized surrogate, `H_jj + mu` for the
//! diagonal-Hessian one) and linear coefficient `I y`, so the minimizer is a
//! weighted prox of `G + indicator(K)` evaluated at `xc - (I y) / q`.

use std::fmt;

use ndarray::{Array1, ArrayView1, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objective::{Constraint, Regularizer};

const SUPPORTED_TABLE: &str = "{linearized, diagonal_hessian} x {none, l1, elastic_net, sparse_group_lasso} x {all_space}; \
{linearized} x {l1} x {l2_ball}";

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("unsupported subproblem ({surrogate}, {regularizer}, {constraint}); supported: {supported}")]
    Unsupported {
        surrogate: String,
        regularizer: String,
        constraint: String,
        supported: &'static str,
    },
    #[error("prox of {regularizer} restricted to {constraint} has no closed form here")]
    UnsupportedProx {
        regularizer: String,
        constraint: String,
    },
    #[error("input vectors have inconsistent lengths")]
    DimensionMismatch,
    #[error("surrogate strong convexity must be positive, got {0}")]
    NonPositiveMu(f64),
    #[error("diagonal-Hessian surrogate needs the Hessian diagonal")]
    MissingHessian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    /// `grad f(xc)^T (x - xc) + (mu/2) ||x - xc||^2`
    Linearized,
    /// Adds `(1/2)(x - xc)^T H (x - xc)` with `H` the Hessian diagonal at `xc`.
    DiagonalHessian,
}

impl fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SurrogateKind::Linearized => "linearized",
            SurrogateKind::DiagonalHessian => "diagonal_hessian",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    pub mu: f64,
}

impl SurrogateSpec {
    pub fn new(kind: SurrogateKind, mu: f64) -> Result<Self, SolveError> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(SolveError::NonPositiveMu(mu));
        }
        Ok(Self { kind, mu })
    }

    /// Bound on `||grad f~(x~; xc) - grad f~(xc; xc)|| / ||x~ - xc||` given the
    /// agent's gradient Lipschitz constant.
    pub fn curvature_bound(&self, local_lipschitz: f64) -> f64 {
        match self.kind {
            SurrogateKind::Linearized => self.mu,
            SurrogateKind::DiagonalHessian => self.mu + local_lipschitz,
        }
    }
}

/// Data of one local subproblem.
#[derive(Debug, Clone, Copy)]
pub struct SubproblemInput<'a> {
    pub x_center: ArrayView1<'a, f64>,
    /// `I y - grad f_i(x_center)`
    pub tracked_term: ArrayView1<'a, f64>,
    pub local_grad: ArrayView1<'a, f64>,
    pub diag_hessian: Option<ArrayView1<'a, f64>>,
}

fn regularizer_name(reg: &Regularizer) -> &'static str {
    match reg {
        Regularizer::None => "none",
        Regularizer::L1 { .. } => "l1",
        Regularizer::ElasticNet { .. } => "elastic_net",
        Regularizer::SparseGroupLasso { .. } => "sparse_group_lasso",
    }
}

fn constraint_name(c: &Constraint) -> &'static str {
    match c {
        Constraint::AllSpace => "all_space",
        Constraint::L2Ball { .. } => "l2_ball",
    }
}

/// Errors unless `(kind, reg, constraint)` has a closed-form solver.
pub fn check_supported(kind: SurrogateKind, reg: &Regularizer, constraint: &Constraint) -> Result<(), SolveError> {
    let ok = match constraint {
        Constraint::AllSpace => true,
        Constraint::L2Ball { .. } => {
            kind == SurrogateKind::Linearized && matches!(reg, Regularizer::L1 { .. })
        }
    };
    if ok {
        Ok(())
    } else {
        Err(SolveError::Unsupported {
            surrogate: kind.to_string(),
            regularizer: regularizer_name(reg).into(),
            constraint: constraint_name(constraint).into(),
            supported: SUPPORTED_TABLE,
        })
    }
}

pub fn soft_threshold(v: ArrayView1<f64>, t: f64) -> Array1<f64> {
    debug_assert!(t >= 0.0);
    v.mapv(|x| shrink(x, t))
}

#[inline]
fn shrink(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Prox of `sum_S w_S ||x_S|| + lambda ||x||_1`: soft-threshold by `lambda`,
/// then shrink each group's norm by `w_S`.
pub fn group_soft_threshold(v: ArrayView1<f64>, groups: &[Vec<usize>], weights: &[f64], lambda: f64) -> Array1<f64> {
    let mut out = soft_threshold(v, lambda);
    for (group, &w) in groups.iter().zip(weights) {
        let len = group.iter().map(|&j| out[j] * out[j]).sum::<f64>().sqrt();
        let scale = if len > w { 1.0 - w / len } else { 0.0 };
        for &j in group {
            out[j] *= scale;
        }
    }
    out
}

/// Minimizer of `sum_j (q_j/2)(x_j - c_j)^2 + lambda ||x||_1 + sum_S w_S ||x_S||`
/// for positive per-coordinate curvature `q`.
///
/// Within a surviving group `x_j = a_j t / (q_j t + w)` where
/// `a_j = sign(c_j) max(q_j |c_j| - lambda, 0)` and `t = ||x_S||` is the root of
/// `sum_j a_j^2 / (q_j t + w)^2 = 1`, found by bisection.
pub fn weighted_group_prox(
    c: ArrayView1<f64>,
    q: ArrayView1<f64>,
    groups: &[Vec<usize>],
    weights: &[f64],
    lambda: f64,
) -> Array1<f64> {
    let a = Zip::from(&c).and(&q).map_collect(|&c, &q| shrink(q * c, lambda));
    let mut out = Array1::zeros(c.len());
    for (group, &w) in groups.iter().zip(weights) {
        let a_norm = group.iter().map(|&j| a[j] * a[j]).sum::<f64>().sqrt();
        if a_norm <= w {
            continue;
        }
        if w == 0.0 {
            for &j in group {
                out[j] = a[j] / q[j];
            }
            continue;
        }
        let excess = |t: f64| group.iter().map(|&j| (a[j] / (q[j] * t + w)).powi(2)).sum::<f64>() - 1.0;
        let q_min = group.iter().map(|&j| q[j]).fold(f64::INFINITY, f64::min);
        let (mut lo, mut hi) = (0.0, a_norm / q_min);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if excess(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        for &j in group {
            out[j] = a[j] * t / (q[j] * t + w);
        }
    }
    out
}

/// Euclidean projection onto `{x : ||x|| <= radius}`; `radius = inf` is the identity.
pub fn project_l2_ball(v: ArrayView1<f64>, radius: f64) -> Array1<f64> {
    let len = v.dot(&v).sqrt();
    if len <= radius {
        v.to_owned()
    } else {
        v.mapv(|x| x * (radius / len))
    }
}

/// Prox of `lambda ||.||_1 + indicator(||x|| <= radius)`.
pub fn prox_l1_in_ball(v: ArrayView1<f64>, lambda: f64, radius: f64) -> Array1<f64> {
    let s = soft_threshold(v, lambda);
    project_l2_ball(s.view(), radius)
}

/// Prox of `step * G + indicator(K)` at `v`.
pub fn prox(reg: &Regularizer, constraint: &Constraint, v: ArrayView1<f64>, step: f64) -> Result<Array1<f64>, SolveError> {
    match (reg, constraint) {
        (Regularizer::None, c) => Ok(project_l2_ball(v, c.radius())),
        (Regularizer::L1 { lambda }, c) => Ok(prox_l1_in_ball(v, step * lambda, c.radius())),
        (Regularizer::ElasticNet { l1, l2 }, Constraint::AllSpace) => {
            let denom = 1.0 + 2.0 * step * l2;
            Ok(v.mapv(|x| shrink(x, step * l1) / denom))
        }
        (Regularizer::SparseGroupLasso { groups, weights, lambda }, Constraint::AllSpace) => {
            let scaled: Vec<f64> = weights.iter().map(|w| w * step).collect();
            Ok(group_soft_threshold(v, groups, &scaled, step * lambda))
        }
        (reg, c) => Err(SolveError::UnsupportedProx {
            regularizer: regularizer_name(reg).into(),
            constraint: constraint_name(c).into(),
        }),
    }
}

/// Exact minimizer `x~` of the local strongly convex subproblem.
pub fn solve_subproblem(
    spec: &SurrogateSpec,
    input: &SubproblemInput<'_>,
    reg: &Regularizer,
    constraint: &Constraint,
) -> Result<Array1<f64>, SolveError> {
    check_supported(spec.kind, reg, constraint)?;
    let n = input.x_center.len();
    if input.tracked_term.len() != n || input.local_grad.len() != n {
        return Err(SolveError::DimensionMismatch);
    }
    // grad f_i(xc) cancels: the linear coefficient is I y
    let coef = &input.local_grad + &input.tracked_term;
    let q: Array1<f64> = match spec.kind {
        SurrogateKind::Linearized => Array1::from_elem(n, spec.mu),
        SurrogateKind::DiagonalHessian => {
            let h = input.diag_hessian.ok_or(SolveError::MissingHessian)?;
            if h.len() != n {
                return Err(SolveError::DimensionMismatch);
            }
            h.mapv(|v| v.max(0.0) + spec.mu)
        }
    };
    let center = Zip::from(&input.x_center)
        .and(&coef)
        .and(&q)
        .map_collect(|&x, &g, &q| x - g / q);
    let out = match (reg, constraint) {
        (Regularizer::L1 { lambda }, Constraint::L2Ball { radius }) => {
            prox_l1_in_ball(center.view(), lambda / spec.mu, *radius)
        }
        (Regularizer::None, _) => center,
        (Regularizer::L1 { lambda }, _) => {
            Zip::from(&center).and(&q).map_collect(|&c, &q| shrink(c, lambda / q))
        }
        (Regularizer::ElasticNet { l1, l2 }, _) => Zip::from(&center)
            .and(&q)
            .map_collect(|&c, &q| shrink(c, l1 / q) / (1.0 + 2.0 * l2 / q)),
        (Regularizer::SparseGroupLasso { groups, weights, lambda }, _) => {
            weighted_group_prox(center.view(), q.view(), groups, weights, *lambda)
        }
    };
    Ok(out)
}

/// `v = x + gamma (x~ - x)`
pub fn relax(x_center: ArrayView1<f64>, x_tilde: ArrayView1<f64>, gamma: f64) -> Array1<f64> {
    debug_assert!((0.0..=1.0).contains(&gamma));
    Zip::from(&x_center)
        .and(&x_tilde)
        .map_collect(|&x, &t| x + gamma * (t - x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(array![2.0].view(), 1.5), array![0.5]);
        assert_eq!(soft_threshold(array![-0.3].view(), 0.5), array![0.0]);
        let v = array![1.0, -2.0, 0.0];
        assert_eq!(soft_threshold(v.view(), 0.0), v);
    }

    #[test]
    fn group_kill_and_reduction() {
        let v = array![3.0, 4.0];
        let groups = vec![vec![0, 1]];
        let at_boundary = group_soft_threshold(v.view(), &groups, &[5.0], 0.0);
        assert_eq!(at_boundary, array![0.0, 0.0]);
        assert_eq!(group_soft_threshold(v.view(), &groups, &[6.0], 0.0), array![0.0, 0.0]);
        let v = array![1.5, -0.2, 0.7, -3.0];
        let groups = vec![vec![0, 2], vec![1, 3]];
        assert_eq!(
            group_soft_threshold(v.view(), &groups, &[0.0, 0.0], 0.4),
            soft_threshold(v.view(), 0.4)
        );
    }

    #[test]
    fn weighted_group_prox_matches_uniform_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let groups = vec![vec![0, 3], vec![1, 2, 4]];
        for _ in 0..50 {
            let c: Array1<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let q = 2.5;
            let w = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
            let lam = rng.random_range(0.0..1.0);
            let got = weighted_group_prox(c.view(), Array1::from_elem(5, q).view(), &groups, &w, lam);
            let scaled = c.mapv(|v| v);
            let expected = group_soft_threshold(scaled.view(), &groups, &[w[0] / q, w[1] / q], lam / q);
            for (a, b) in got.iter().zip(expected.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn projection_cases() {
        assert_eq!(project_l2_ball(array![3.0, 4.0].view(), 10.0), array![3.0, 4.0]);
        let p = project_l2_ball(array![3.0, 4.0].view(), 1.0);
        assert_abs_diff_eq!(p[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.8, epsilon = 1e-15);
        assert_eq!(project_l2_ball(array![0.0, 0.0].view(), 2.0), array![0.0, 0.0]);
    }

    #[test]
    fn prox_in_ball_reductions() {
        let v = array![3.0, -4.0, 0.5];
        assert_eq!(prox_l1_in_ball(v.view(), 0.0, 1.0), project_l2_ball(v.view(), 1.0));
        assert_eq!(prox_l1_in_ball(v.view(), 0.7, f64::INFINITY), soft_threshold(v.view(), 0.7));
    }

    #[test]
    fn one_dimensional_subproblem() {
        let spec = SurrogateSpec::new(SurrogateKind::Linearized, 1.0).unwrap();
        let x = array![0.0];
        let grad = array![0.5];
        let tracked = array![-2.5];
        let input = SubproblemInput {
            x_center: x.view(),
            tracked_term: tracked.view(),
            local_grad: grad.view(),
            diag_hessian: None,
        };
        let out = solve_subproblem(&spec, &input, &Regularizer::L1 { lambda: 1.0 }, &Constraint::AllSpace).unwrap();
        assert_abs_diff_eq!(out[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_tracked_gradient_is_fixed_point() {
        let spec = SurrogateSpec::new(SurrogateKind::Linearized, 3.0).unwrap();
        let x = array![0.3, -1.2];
        let g = array![1.0, 2.0];
        let t = -&g;
        let input = SubproblemInput {
            x_center: x.view(),
            tracked_term: t.view(),
            local_grad: g.view(),
            diag_hessian: None,
        };
        let out = solve_subproblem(&spec, &input, &Regularizer::None, &Constraint::AllSpace).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn unsupported_combinations_error() {
        let ball = Constraint::L2Ball { radius: 1.0 };
        assert!(check_supported(SurrogateKind::Linearized, &Regularizer::L1 { lambda: 1.0 }, &ball).is_ok());
        let err = check_supported(SurrogateKind::DiagonalHessian, &Regularizer::L1 { lambda: 1.0 }, &ball).unwrap_err();
        assert!(err.to_string().contains("supported"));
        assert!(check_supported(SurrogateKind::Linearized, &Regularizer::ElasticNet { l1: 1.0, l2: 1.0 }, &ball).is_err());
        assert!(SurrogateSpec::new(SurrogateKind::Linearized, 0.0).is_err());
        assert!(prox(&Regularizer::ElasticNet { l1: 1.0, l2: 1.0 }, &ball, array![1.0].view(), 1.0).is_err());
    }

    #[test]
    fn relax_cases() {
        let x = array![0.0];
        let t = array![2.0];
        assert_eq!(relax(x.view(), t.view(), 1.0), t);
        assert_eq!(relax(x.view(), t.view(), 0.5), array![1.0]);
    }
}
