//! Synthetic data for the three experiment families.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    sigmoid, Constraint, GeneratorInfo, GroundTruth, LocalLoss, ObjectiveError, ProblemInstance,
    Regularizer,
};

/// Decentralized LASSO: `sum_i ||M_i x - b_i||^2 + lambda ||x||_1`.
///
/// `noise_sd` is a standard deviation; the default `0.1` corresponds to noise
/// variance `0.01`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LassoParams {
    pub rows_per_agent: usize,
    pub dimension: usize,
    pub num_agents: usize,
    pub lambda: f64,
    pub omega: f64,
    pub density: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for LassoParams {
    fn default() -> Self {
        Self {
            rows_per_agent: 10,
            dimension: 300,
            num_agents: 20,
            lambda: 2.0,
            omega: 1.1,
            density: 0.3,
            noise_sd: 0.1,
            seed: 0,
        }
    }
}

/// Sparse logistic regression with labels drawn from the planted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticParams {
    pub samples_per_agent: usize,
    pub dimension: usize,
    pub num_agents: usize,
    pub lambda: f64,
    pub density: f64,
    pub seed: u64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            samples_per_agent: 3,
            dimension: 100,
            num_agents: 20,
            lambda: 0.01,
            density: 0.3,
            seed: 0,
        }
    }
}

/// Robust regression with Welsch's loss over an L2 ball, plus an L1 term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MEstimatorParams {
    pub samples_per_agent: usize,
    pub dimension: usize,
    pub num_agents: usize,
    pub alpha: f64,
    pub radius: f64,
    pub lambda: f64,
    pub density: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for MEstimatorParams {
    fn default() -> Self {
        Self {
            samples_per_agent: 10,
            dimension: 100,
            num_agents: 30,
            alpha: 0.1,
            radius: 2.0,
            lambda: 0.01,
            density: 0.1,
            noise_sd: 0.1,
            seed: 0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> ObjectiveError {
    ObjectiveError::InvalidParameter(msg.into())
}

fn check_common(dimension: usize, num_agents: usize, per_agent: usize, density: f64) -> Result<(), ObjectiveError> {
    if dimension == 0 || num_agents == 0 || per_agent == 0 {
        return Err(invalid("dimension, agent count and per-agent sample count must be positive"));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(invalid(format!("density {density} not in (0,1]")));
    }
    Ok(())
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Sparse planted vector with `round(density * n)` standard normal nonzeros.
fn planted_signal(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Array1<f64> {
    let nnz = ((density * n as f64).round() as usize).clamp(1, n);
    let mut x0 = Array1::zeros(n);
    let mut support = sample(rng, n, nnz).into_vec();
    support.sort_unstable();
    for j in support {
        x0[j] = StandardNormal.sample(rng);
    }
    x0
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, col_sd: &[f64]) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for mut row in m.rows_mut() {
        for (v, sd) in row.iter_mut().zip(col_sd) {
            let z: f64 = StandardNormal.sample(rng);
            *v = z * sd;
        }
    }
    m
}

pub fn make_lasso(params: &LassoParams) -> Result<(ProblemInstance, GroundTruth), ObjectiveError> {
    let p = params;
    check_common(p.dimension, p.num_agents, p.rows_per_agent, p.density)?;
    if p.lambda < 0.0 || p.omega < 0.0 || p.noise_sd < 0.0 {
        return Err(invalid("lambda, omega and noise_sd must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let x0 = planted_signal(&mut rng, p.dimension, p.density);
    // Sigma_jj = j^-omega with 1-based j
    let col_sd: Vec<f64> = (1..=p.dimension)
        .map(|j| (j as f64).powf(-p.omega).sqrt())
        .collect();
    let locals = (0..p.num_agents)
        .map(|_| {
            let m = gaussian_matrix(&mut rng, p.rows_per_agent, p.dimension, &col_sd);
            let noise: Array1<f64> = (0..p.rows_per_agent)
                .map(|_| p.noise_sd * normal(&mut rng))
                .collect();
            let b = m.dot(&x0) + noise;
            LocalLoss::Quadratic { m, b }
        })
        .collect();
    let generator = GeneratorInfo {
        family: "lasso".into(),
        params: serde_json::to_value(p).expect("params serialize"),
        seed: p.seed,
    };
    let instance = ProblemInstance::new(
        locals,
        Regularizer::L1 { lambda: p.lambda },
        Constraint::AllSpace,
        Some(generator),
    )?;
    Ok((
        instance,
        GroundTruth {
            x0,
            density: p.density,
            noise_scale: p.noise_sd,
        },
    ))
}

pub fn make_logistic(params: &LogisticParams) -> Result<(ProblemInstance, GroundTruth), ObjectiveError> {
    let p = params;
    check_common(p.dimension, p.num_agents, p.samples_per_agent, p.density)?;
    if p.lambda < 0.0 {
        return Err(invalid("lambda must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let x0 = planted_signal(&mut rng, p.dimension, p.density);
    let unit = vec![1.0; p.dimension];
    let locals = (0..p.num_agents)
        .map(|_| {
            let features = gaussian_matrix(&mut rng, p.samples_per_agent, p.dimension, &unit);
            let labels = features
                .dot(&x0)
                .mapv(|m| if rng.random::<f64>() < sigmoid(m) { 1.0 } else { -1.0 });
            LocalLoss::Logistic { features, labels }
        })
        .collect();
    let generator = GeneratorInfo {
        family: "logistic".into(),
        params: serde_json::to_value(p).expect("params serialize"),
        seed: p.seed,
    };
    let instance = ProblemInstance::new(
        locals,
        Regularizer::L1 { lambda: p.lambda },
        Constraint::AllSpace,
        Some(generator),
    )?;
    Ok((
        instance,
        GroundTruth {
            x0,
            density: p.density,
            noise_scale: 0.0,
        },
    ))
}

pub fn make_mestimator(params: &MEstimatorParams) -> Result<(ProblemInstance, GroundTruth), ObjectiveError> {
    let p = params;
    check_common(p.dimension, p.num_agents, p.samples_per_agent, p.density)?;
    if !(p.alpha > 0.0) || !(p.radius > 0.0) || p.lambda < 0.0 || p.noise_sd < 0.0 {
        return Err(invalid("alpha and radius must be positive; lambda, noise_sd >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut x0 = planted_signal(&mut rng, p.dimension, p.density);
    let len = x0.dot(&x0).sqrt();
    if len > 0.0 {
        x0 /= len;
    }
    let unit = vec![1.0; p.dimension];
    let total = p.samples_per_agent * p.num_agents;
    let locals = (0..p.num_agents)
        .map(|_| {
            let features = gaussian_matrix(&mut rng, p.samples_per_agent, p.dimension, &unit);
            let clean = features.dot(&x0);
            let targets = clean.mapv(|c| c + p.noise_sd * normal(&mut rng));
            LocalLoss::Welsch {
                features,
                targets,
                alpha: p.alpha,
                total_samples: total,
            }
        })
        .collect();
    let generator = GeneratorInfo {
        family: "mestimator".into(),
        params: serde_json::to_value(p).expect("params serialize"),
        seed: p.seed,
    };
    let instance = ProblemInstance::new(
        locals,
        Regularizer::L1 { lambda: p.lambda },
        Constraint::L2Ball { radius: p.radius },
        Some(generator),
    )?;
    Ok((
        instance,
        GroundTruth {
            x0,
            density: p.density,
            noise_scale: p.noise_sd,
        },
    ))
}
