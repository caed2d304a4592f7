//! Brute-force oracles shared by the integration and acceptance tests.
//!
//! Nothing in here calls the solver code it is used to check.

#![allow(dead_code)]

use dsca_core::localsolve::{prox_l1_in_ball, solve_subproblem, SubproblemInput, SurrogateKind, SurrogateSpec};
use dsca_core::objective::{Constraint, ProblemInstance, Regularizer};
use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central finite-difference gradient of agent `i`'s loss.
pub fn fd_gradient(problem: &ProblemInstance, i: usize, x: ArrayView1<f64>, h: f64) -> Array1<f64> {
    let mut g = Array1::zeros(x.len());
    let mut probe = x.to_owned();
    for j in 0..x.len() {
        let orig = probe[j];
        probe[j] = orig + h;
        let up = problem.loss_local(i, probe.view());
        probe[j] = orig - h;
        let down = problem.loss_local(i, probe.view());
        probe[j] = orig;
        g[j] = (up - down) / (2.0 * h);
    }
    g
}

pub fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `G(x)` written out from the definitions.
pub fn reg_value(reg: &Regularizer, x: &[f64]) -> f64 {
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    match reg {
        Regularizer::None => 0.0,
        Regularizer::L1 { lambda } => lambda * l1,
        Regularizer::ElasticNet { l1: a, l2: b } => a * l1 + b * x.iter().map(|v| v * v).sum::<f64>(),
        Regularizer::SparseGroupLasso { groups, weights, lambda } => {
            let groups_term: f64 = groups
                .iter()
                .zip(weights)
                .map(|(g, w)| w * l2(&g.iter().map(|&j| x[j]).collect::<Vec<_>>()))
                .sum();
            groups_term + lambda * l1
        }
    }
}

/// One strongly convex local subproblem, stated from scratch:
/// `phi(x) = g^T (x - c) + 0.5 sum_j q_j (x_j - c_j)^2 + G(x)` over `||x|| <= radius`.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub center: Vec<f64>,
    /// Linear coefficient: local gradient plus the tracked correction.
    pub linear: Vec<f64>,
    /// Diagonal curvature `h_j + mu`.
    pub curvature: Vec<f64>,
    pub reg: Regularizer,
    pub radius: f64,
}

impl Subproblem {
    pub fn value(&self, x: &[f64]) -> f64 {
        if l2(x) > self.radius * (1.0 + 1e-12) {
            return f64::INFINITY;
        }
        let mut s = 0.0;
        for j in 0..x.len() {
            let d = x[j] - self.center[j];
            s += self.linear[j] * d + 0.5 * self.curvature[j] * d * d;
        }
        s + reg_value(&self.reg, x)
    }

    fn smooth_grad(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|j| self.linear[j] + self.curvature[j] * (x[j] - self.center[j]))
            .collect()
    }

    /// Largest violation of `grad_s(x)^T (z - x) + G(z) - G(x) >= 0` over
    /// random feasible probes `z` at distances between 1e-4 and 1.
    pub fn vi_residual(&self, x: &[f64], rng: &mut ChaCha8Rng, probes: usize) -> f64 {
        let g = self.smooth_grad(x);
        let gx = reg_value(&self.reg, x);
        let n = x.len();
        let mut worst: f64 = 0.0;
        for p in 0..probes {
            let scale = 10f64.powi(-((p % 5) as i32));
            let mut z: Vec<f64> = (0..n).map(|j| x[j] + scale * rng.random_range(-1.0..1.0)).collect();
            // shrink towards the origin, where the nonsmooth terms kink
            if p % 7 == 0 {
                z = x.iter().map(|v| v * (1.0 - scale)).collect();
            }
            let norm = l2(&z);
            if norm > self.radius {
                z.iter_mut().for_each(|v| *v *= self.radius / norm);
            }
            let lin: f64 = (0..n).map(|j| g[j] * (z[j] - x[j])).sum();
            let gap = lin + reg_value(&self.reg, &z) - gx;
            worst = worst.max(-gap);
        }
        worst
    }
}

/// Zooming grid search: evaluate a `points^n` grid on a box, recenter on the
/// best point, shrink, repeat until the cell size drops below `tol`.
/// `points` must be odd so the grid contains its center.
pub fn grid_minimize(sp: &Subproblem, half_width: f64, points: usize, tol: f64) -> Vec<f64> {
    let n = sp.center.len();
    let mut center = sp.center.clone();
    if l2(&center) > sp.radius {
        let s = sp.radius / l2(&center);
        center.iter_mut().for_each(|v| *v *= s);
    }
    let mut hw = half_width;
    let mut best = center.clone();
    let mut best_val = sp.value(&best);
    let total = points.pow(n as u32);
    let mut x = vec![0.0; n];
    while hw > tol {
        let step = 2.0 * hw / (points - 1) as f64;
        for idx in 0..total {
            let mut rem = idx;
            for j in 0..n {
                x[j] = center[j] - hw + step * (rem % points) as f64;
                rem /= points;
            }
            // grid points outside the ball are pulled back onto the sphere
            let len = l2(&x);
            if len > sp.radius {
                x.iter_mut().for_each(|v| *v *= sp.radius / len);
            }
            let v = sp.value(&x);
            if v < best_val {
                best_val = v;
                best.copy_from_slice(&x);
            }
        }
        // the regularizers kink on coordinate subspaces, where a box grid
        // can stall in a narrow valley; also try best with coordinates zeroed
        for mask in 1..(1usize << n) {
            let cand: Vec<f64> = (0..n).map(|j| if mask >> j & 1 == 1 { 0.0 } else { best[j] }).collect();
            let v = sp.value(&cand);
            if v < best_val {
                best_val = v;
                best = cand;
            }
        }
        center.copy_from_slice(&best);
        hw = 3.0 * step;
    }
    best
}

/// Exact prox of `lambda ||.||_1 + indicator(||x|| <= radius)` by enumerating
/// every support and sign pattern.
pub fn prox_l1_ball_enumerate(v: &[f64], lambda: f64, radius: f64) -> Vec<f64> {
    let n = v.len();
    let objective = |x: &[f64]| {
        0.5 * x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>() + lambda * x.iter().map(|a| a.abs()).sum::<f64>()
    };
    let mut best = vec![0.0; n];
    let mut best_val = objective(&best);
    // each coordinate is 0, positive or negative
    for code in 0..3usize.pow(n as u32) {
        let mut rem = code;
        let mut cand = vec![0.0; n];
        let mut signs = vec![0i8; n];
        for j in 0..n {
            signs[j] = match rem % 3 {
                0 => 0,
                1 => 1,
                _ => -1,
            };
            rem /= 3;
            cand[j] = if signs[j] == 0 { 0.0 } else { v[j] - lambda * signs[j] as f64 };
        }
        let len = l2(&cand);
        if len > radius {
            cand.iter_mut().for_each(|c| *c *= radius / len);
        }
        let consistent = (0..n).all(|j| match signs[j] {
            0 => true,
            s => cand[j] * s as f64 > 0.0,
        });
        if consistent {
            let val = objective(&cand);
            if val < best_val {
                best_val = val;
                best = cand;
            }
        }
    }
    best
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
}

pub fn random_regularizer(rng: &mut ChaCha8Rng, n: usize, family: usize) -> Regularizer {
    match family {
        0 => Regularizer::None,
        1 => Regularizer::L1 { lambda: rng.random_range(0.0..1.5) },
        2 => Regularizer::ElasticNet {
            l1: rng.random_range(0.0..1.5),
            l2: rng.random_range(0.0..1.0),
        },
        _ => {
            let mut perm: Vec<usize> = (0..n).collect();
            for j in (1..n).rev() {
                perm.swap(j, rng.random_range(0..=j));
            }
            let cut = rng.random_range(1..=n);
            let groups: Vec<Vec<usize>> = [perm[..cut].to_vec(), perm[cut..].to_vec()]
                .into_iter()
                .filter(|g| !g.is_empty())
                .collect();
            let weights = groups.iter().map(|_| rng.random_range(0.0..1.5)).collect();
            Regularizer::SparseGroupLasso {
                groups,
                weights,
                lambda: rng.random_range(0.0..1.0),
            }
        }
    }
}

/// Worst grid-oracle deviation and VI residual of `solve_subproblem` over
/// 200 random instances with `n <= 3`.
pub fn subproblem_oracle_errors(kind: SurrogateKind, reg_family: usize, ball: bool, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_err: f64 = 0.0;
    let mut worst_vi: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=3);
        let mu = rng.random_range(0.5..2.0);
        let center = random_vec(&mut rng, n, 2.0);
        let local_grad = random_vec(&mut rng, n, 3.0);
        let tracked = random_vec(&mut rng, n, 3.0);
        let hess: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let reg = random_regularizer(&mut rng, n, reg_family);
        let constraint = if ball {
            Constraint::L2Ball {
                radius: rng.random_range(0.3..2.0),
            }
        } else {
            Constraint::AllSpace
        };
        let spec = SurrogateSpec::new(kind, mu).unwrap();
        let c = Array1::from(center.clone());
        let g = Array1::from(local_grad.clone());
        let t = Array1::from(tracked.clone());
        let h = Array1::from(hess.clone());
        let input = SubproblemInput {
            x_center: c.view(),
            tracked_term: t.view(),
            local_grad: g.view(),
            diag_hessian: Some(h.view()),
        };
        let got = solve_subproblem(&spec, &input, &reg, &constraint).unwrap();

        let curvature: Vec<f64> = match kind {
            SurrogateKind::Linearized => vec![mu; n],
            SurrogateKind::DiagonalHessian => hess.iter().map(|h| h + mu).collect(),
        };
        let sp = Subproblem {
            linear: local_grad.iter().zip(&tracked).map(|(a, b)| a + b).collect(),
            center,
            curvature,
            reg,
            radius: constraint.radius(),
        };
        let q_min = sp.curvature.iter().copied().fold(f64::INFINITY, f64::min);
        let reach = (l2(&sp.linear) + 3.0 * n as f64) / q_min + l2(&sp.center) + 1.0;
        let oracle = grid_minimize(&sp, reach, 21, 1e-7);
        let got = got.to_vec();
        let err = got.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // the grid can only tie or lose against an exact minimizer
        worst_err = worst_err.max(sp.value(&got) - sp.value(&oracle) - 1e-9);
        worst_err = worst_err.max(err);
        worst_vi = worst_vi.max(sp.vi_residual(&got, &mut rng, 200));
    }
    (worst_err, worst_vi)
}

/// Worst deviation of `prox_l1_in_ball` from the enumeration oracle; a quarter
/// of the draws put the radius on or within 1e-9 of `||soft(v, lambda)||`.
pub fn prox_oracle_worst(draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for draw in 0..draws {
        let n = rng.random_range(1..=6);
        let v = random_vec(&mut rng, n, 3.0);
        let lambda = rng.random_range(0.0..1.5);
        let soft_norm = l2(&v.iter().map(|x| x.signum() * (x.abs() - lambda).max(0.0)).collect::<Vec<_>>());
        let radius = match draw % 4 {
            0 if soft_norm > 0.0 => soft_norm,
            1 if soft_norm > 0.0 => soft_norm * (1.0 + 1e-9),
            2 if soft_norm > 0.0 => soft_norm * (1.0 - 1e-9),
            _ => rng.random_range(0.05..3.0),
        };
        let got = prox_l1_in_ball(Array1::from(v.clone()).view(), lambda, radius);
        let want = prox_l1_ball_enumerate(&v, lambda, radius);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Worst `||grad - fd|| / ||fd||` over `points` random points, cycling agents.
pub fn fd_worst_relative(problem: &ProblemInstance, points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = problem.dimension();
    let mut worst: f64 = 0.0;
    for point in 0..points {
        let i = point % problem.num_agents();
        let x = Array1::from(random_vec(&mut rng, n, 1.0));
        let g = problem.grad_local(i, x.view());
        let fd = fd_gradient(problem, i, x.view(), 1e-6);
        let rel = l2((&g - &fd).as_slice().unwrap()) / l2(fd.as_slice().unwrap()).max(1e-12);
        worst = worst.max(rel);
    }
    worst
}
