//! Composite objective `U(x) = sum_i f_i(x) + G(x)` over a convex set `K`.

mod codec;
mod data;

pub use data::{make_lasso, make_logistic, make_mestimator, LassoParams, LogisticParams, MEstimatorParams};

use ndarray::{Array1, Array2, ArrayView1, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const POWER_ITER_TOL: f64 = 1e-8;
const POWER_ITER_MAX: usize = 10_000;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("invalid problem parameter: {0}")]
    InvalidParameter(String),
    #[error("power iteration for agent {agent} did not converge in {iterations} steps")]
    PowerIteration { agent: usize, iterations: usize },
    #[error("instance decode failed: {0}")]
    Decode(#[from] serde_json::Error),
}

/// Smooth part owned by one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalLoss {
    /// `||M x - b||^2`
    Quadratic {
        #[serde(with = "codec::matrix")]
        m: Array2<f64>,
        #[serde(with = "codec::vector")]
        b: Array1<f64>,
    },
    /// `sum_s log(1 + exp(-y_s u_s^T x))`, one sample per row of `features`.
    Logistic {
        #[serde(with = "codec::matrix")]
        features: Array2<f64>,
        #[serde(with = "codec::vector")]
        labels: Array1<f64>,
    },
    /// `(1/|D|) sum_s rho_alpha(u_s^T x - y_s)` with Welsch's loss
    /// `rho_alpha(t) = (1 - exp(-alpha t^2 / 2)) / alpha`.
    Welsch {
        #[serde(with = "codec::matrix")]
        features: Array2<f64>,
        #[serde(with = "codec::vector")]
        targets: Array1<f64>,
        alpha: f64,
        total_samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    None,
    L1 { lambda: f64 },
    /// `l1 ||x||_1 + l2 ||x||_2^2`
    ElasticNet { l1: f64, l2: f64 },
    /// `sum_S w_S ||x_S||_2 + lambda ||x||_1` over a partition of the coordinates.
    SparseGroupLasso {
        groups: Vec<Vec<usize>>,
        weights: Vec<f64>,
        lambda: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    AllSpace,
    L2Ball { radius: f64 },
}

impl Constraint {
    /// Ball radius, `+inf` for the whole space.
    pub fn radius(&self) -> f64 {
        match *self {
            Constraint::AllSpace => f64::INFINITY,
            Constraint::L2Ball { radius } => radius,
        }
    }

    /// Distance by which `x` leaves the set.
    pub fn violation(&self, x: ArrayView1<f64>) -> f64 {
        (norm(x) - self.radius()).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    pub per_agent: Vec<f64>,
    /// `max_i l_i`
    pub l: f64,
    /// `I * l`
    pub big_l: f64,
}

/// Generator family, its parameters and seed, kept with every instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub family: String,
    pub params: serde_json::Value,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(with = "codec::vector")]
    pub x0: Array1<f64>,
    pub density: f64,
    pub noise_scale: f64,
}

/// `U(x)` split into the finite composite value and the distance outside `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    dimension: usize,
    locals: Vec<LocalLoss>,
    regularizer: Regularizer,
    constraint: Constraint,
    smoothness: Smoothness,
    generator: Option<GeneratorInfo>,
}

impl ProblemInstance {
    pub fn new(
        locals: Vec<LocalLoss>,
        regularizer: Regularizer,
        constraint: Constraint,
        generator: Option<GeneratorInfo>,
    ) -> Result<Self, ObjectiveError> {
        let bad = |msg: String| Err(ObjectiveError::InvalidParameter(msg));
        let Some(first) = locals.first() else {
            return bad("at least one agent is required".into());
        };
        let dimension = loss_dimension(first);
        if dimension == 0 {
            return bad("dimension must be positive".into());
        }
        for (i, loss) in locals.iter().enumerate() {
            if loss_dimension(loss) != dimension {
                return bad(format!("agent {i} has dimension {}", loss_dimension(loss)));
            }
            match loss {
                LocalLoss::Quadratic { m, b } if m.nrows() != b.len() => {
                    return bad(format!("agent {i}: M has {} rows, b has {}", m.nrows(), b.len()))
                }
                LocalLoss::Logistic { features, labels } => {
                    if features.nrows() != labels.len() {
                        return bad(format!("agent {i}: sample/label count mismatch"));
                    }
                    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
                        return bad(format!("agent {i}: labels must be +1 or -1"));
                    }
                }
                LocalLoss::Welsch {
                    features,
                    targets,
                    alpha,
                    total_samples,
                } => {
                    if features.nrows() != targets.len() {
                        return bad(format!("agent {i}: sample/target count mismatch"));
                    }
                    if !(*alpha > 0.0) {
                        return bad(format!("agent {i}: Welsch shape must be positive"));
                    }
                    if *total_samples == 0 {
                        return bad(format!("agent {i}: global sample count must be positive"));
                    }
                }
                _ => {}
            }
        }
        match &regularizer {
            Regularizer::None => {}
            Regularizer::L1 { lambda } if *lambda < 0.0 => return bad("lambda < 0".into()),
            Regularizer::ElasticNet { l1, l2 } if *l1 < 0.0 || *l2 < 0.0 => {
                return bad("elastic-net weights must be >= 0".into())
            }
            Regularizer::SparseGroupLasso { groups, weights, lambda } => {
                if *lambda < 0.0 || weights.iter().any(|&w| w < 0.0) {
                    return bad("group weights and lambda must be >= 0".into());
                }
                if groups.len() != weights.len() {
                    return bad("one weight per group is required".into());
                }
                let mut seen = vec![false; dimension];
                for &j in groups.iter().flatten() {
                    if j >= dimension || seen[j] {
                        return bad(format!("groups do not partition 0..{dimension}"));
                    }
                    seen[j] = true;
                }
                if seen.iter().any(|s| !s) {
                    return bad(format!("groups do not cover 0..{dimension}"));
                }
            }
            _ => {}
        }
        if let Constraint::L2Ball { radius } = constraint {
            if !(radius > 0.0) {
                return bad(format!("ball radius {radius} must be positive"));
            }
        }
        let per_agent = locals
            .iter()
            .enumerate()
            .map(|(i, loss)| local_lipschitz(i, loss))
            .collect::<Result<Vec<_>, _>>()?;
        let l = per_agent.iter().copied().fold(0.0, f64::max);
        let smoothness = Smoothness {
            big_l: l * locals.len() as f64,
            per_agent,
            l,
        };
        Ok(Self {
            dimension,
            locals,
            regularizer,
            constraint,
            smoothness,
            generator,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn num_agents(&self) -> usize {
        self.locals.len()
    }

    pub fn local(&self, i: usize) -> &LocalLoss {
        &self.locals[i]
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    pub fn smoothness(&self) -> &Smoothness {
        &self.smoothness
    }

    pub fn generator(&self) -> Option<&GeneratorInfo> {
        self.generator.as_ref()
    }

    /// Replaces the regularizer, e.g. to study a different `G` on the same data.
    pub fn with_regularizer(mut self, regularizer: Regularizer) -> Result<Self, ObjectiveError> {
        self.regularizer = regularizer;
        Self::new(self.locals, self.regularizer, self.constraint, self.generator)
    }

    /// Only the Welsch loss makes the smooth part nonconvex.
    pub fn is_convex(&self) -> bool {
        !self.locals.iter().any(|l| matches!(l, LocalLoss::Welsch { .. }))
    }

    pub fn loss_local(&self, i: usize, x: ArrayView1<f64>) -> f64 {
        match &self.locals[i] {
            LocalLoss::Quadratic { m, b } => {
                let r = m.dot(&x) - b;
                r.dot(&r)
            }
            LocalLoss::Logistic { features, labels } => {
                let margins = features.dot(&x);
                Zip::from(&margins)
                    .and(labels)
                    .fold(0.0, |acc, &m, &y| acc + log1p_exp(-y * m))
            }
            LocalLoss::Welsch {
                features,
                targets,
                alpha,
                total_samples,
            } => {
                let r = features.dot(&x) - targets;
                r.iter().map(|&t| welsch(t, *alpha)).sum::<f64>() / *total_samples as f64
            }
        }
    }

    pub fn grad_local(&self, i: usize, x: ArrayView1<f64>) -> Array1<f64> {
        match &self.locals[i] {
            LocalLoss::Quadratic { m, b } => {
                let r = m.dot(&x) - b;
                m.t().dot(&r) * 2.0
            }
            LocalLoss::Logistic { features, labels } => {
                let margins = features.dot(&x);
                let coef = Zip::from(&margins)
                    .and(labels)
                    .map_collect(|&m, &y| -y * sigmoid(-y * m));
                features.t().dot(&coef)
            }
            LocalLoss::Welsch {
                features,
                targets,
                alpha,
                total_samples,
            } => {
                let r = features.dot(&x) - targets;
                let coef = r.mapv(|t| welsch_deriv(t, *alpha));
                features.t().dot(&coef) / *total_samples as f64
            }
        }
    }

    /// Diagonal of the local Hessian, clipped below at zero.
    pub fn hessian_diag_local(&self, i: usize, x: ArrayView1<f64>) -> Array1<f64> {
        let weighted_sq_cols = |features: &Array2<f64>, weights: &Array1<f64>| {
            let mut d = Array1::<f64>::zeros(self.dimension);
            for (row, &w) in features.rows().into_iter().zip(weights) {
                Zip::from(&mut d).and(&row).for_each(|dj, &u| *dj += w * u * u);
            }
            d
        };
        let d = match &self.locals[i] {
            LocalLoss::Quadratic { m, .. } => m.map_axis(ndarray::Axis(0), |c| 2.0 * c.dot(&c)),
            LocalLoss::Logistic { features, .. } => {
                let w = features.dot(&x).mapv(|m| {
                    let s = sigmoid(m);
                    s * (1.0 - s)
                });
                weighted_sq_cols(features, &w)
            }
            LocalLoss::Welsch {
                features,
                targets,
                alpha,
                total_samples,
            } => {
                let w = (features.dot(&x) - targets)
                    .mapv(|t| welsch_second(t, *alpha) / *total_samples as f64);
                weighted_sq_cols(features, &w)
            }
        };
        d.mapv(|v| v.max(0.0))
    }

    /// `F(x) = sum_i f_i(x)`
    pub fn eval_f(&self, x: ArrayView1<f64>) -> f64 {
        (0..self.num_agents()).map(|i| self.loss_local(i, x)).sum()
    }

    /// `grad F(x)`
    pub fn grad_f(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut g = Array1::zeros(self.dimension);
        for i in 0..self.num_agents() {
            g += &self.grad_local(i, x);
        }
        g
    }

    pub fn eval_g(&self, x: ArrayView1<f64>) -> f64 {
        regularizer_value(&self.regularizer, x)
    }

    pub fn eval_u(&self, x: ArrayView1<f64>) -> Evaluation {
        Evaluation {
            value: self.eval_f(x) + self.eval_g(x),
            violation: self.constraint.violation(x),
        }
    }

    pub fn lipschitz_local(&self, i: usize) -> f64 {
        self.smoothness.per_agent[i]
    }

    pub fn to_json(&self) -> Result<String, ObjectiveError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, ObjectiveError> {
        let raw: ProblemInstance = serde_json::from_str(s)?;
        Self::new(raw.locals, raw.regularizer, raw.constraint, raw.generator)
    }
}

pub fn regularizer_value(reg: &Regularizer, x: ArrayView1<f64>) -> f64 {
    let l1 = || x.iter().map(|v| v.abs()).sum::<f64>();
    match reg {
        Regularizer::None => 0.0,
        Regularizer::L1 { lambda } => lambda * l1(),
        Regularizer::ElasticNet { l1: a, l2: b } => a * l1() + b * x.dot(&x),
        Regularizer::SparseGroupLasso { groups, weights, lambda } => {
            let groups_term: f64 = groups
                .iter()
                .zip(weights)
                .map(|(g, w)| w * g.iter().map(|&j| x[j] * x[j]).sum::<f64>().sqrt())
                .sum();
            groups_term + lambda * l1()
        }
    }
}

fn loss_dimension(loss: &LocalLoss) -> usize {
    match loss {
        LocalLoss::Quadratic { m, .. } => m.ncols(),
        LocalLoss::Logistic { features, .. } | LocalLoss::Welsch { features, .. } => features.ncols(),
    }
}

/// `l_i`: `2 lambda_max(M^T M)` for quadratics, `(1/4) sum ||u_s||^2` for
/// logistic and `(1/|D|) sum ||u_s||^2` for Welsch (`|rho''| <= 1`).
fn local_lipschitz(agent: usize, loss: &LocalLoss) -> Result<f64, ObjectiveError> {
    let sq_row_norms = |f: &Array2<f64>| f.rows().into_iter().map(|r| r.dot(&r)).sum::<f64>();
    match loss {
        LocalLoss::Quadratic { m, .. } => Ok(2.0 * gram_top_eigenvalue(agent, m)?),
        LocalLoss::Logistic { features, .. } => Ok(0.25 * sq_row_norms(features)),
        LocalLoss::Welsch {
            features,
            total_samples,
            ..
        } => Ok(sq_row_norms(features) / *total_samples as f64),
    }
}

/// Largest eigenvalue of `M^T M` by power iteration.
fn gram_top_eigenvalue(agent: usize, m: &Array2<f64>) -> Result<f64, ObjectiveError> {
    let n = m.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Array1<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    v /= norm(v.view());
    let mut estimate = 0.0;
    for _ in 0..POWER_ITER_MAX {
        let w = m.t().dot(&m.dot(&v));
        let next = v.dot(&w);
        let len = norm(w.view());
        if len == 0.0 {
            return Ok(0.0);
        }
        v = w / len;
        if (next - estimate).abs() <= POWER_ITER_TOL * next.abs() {
            return Ok(next);
        }
        estimate = next;
    }
    Err(ObjectiveError::PowerIteration {
        agent,
        iterations: POWER_ITER_MAX,
    })
}

pub fn norm(x: ArrayView1<f64>) -> f64 {
    x.dot(&x).sqrt()
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
pub fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn welsch(t: f64, alpha: f64) -> f64 {
    -(-alpha * t * t / 2.0).exp_m1() / alpha
}

pub fn welsch_deriv(t: f64, alpha: f64) -> f64 {
    t * (-alpha * t * t / 2.0).exp()
}

pub fn welsch_second(t: f64, alpha: f64) -> f64 {
    (1.0 - alpha * t * t) * (-alpha * t * t / 2.0).exp()
}
