//! Communication graphs and their mixing matrices.
//!
//! Agents are indexed `0..num_agents`. An edge `(i, j)` means agent `i` can
//! send to agent `j`. The consensus matrix `W` is row-stochastic and the
//! tracking matrix `A` is column-stochastic; both have a positive diagonal and
//! `m_ij > 0` exactly when `(j, i)` is an edge.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used for the row/column sum checks.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Default number of Erdos-Renyi draws before giving up on strong connectivity.
pub const DEFAULT_RESAMPLE_BUDGET: u32 = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("invalid graph parameter: {0}")]
    InvalidParameter(String),
    #[error("no strongly connected draw after {attempts} attempts (I={num_agents}, p={p})")]
    ResampleBudgetExhausted { attempts: u32, num_agents: usize, p: f64 },
    #[error("mixing assumption violated: {0}")]
    Assumption(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    num_agents: usize,
    out_neighbors: Vec<Vec<usize>>,
    in_neighbors: Vec<Vec<usize>>,
    w: Array2<f64>,
    a: Array2<f64>,
    resamples: u32,
}

impl NetworkTopology {
    /// Builds a topology from an edge list and explicit weights without
    /// checking the mixing assumptions. Use [`NetworkTopology::check`] to audit.
    pub fn from_parts(
        num_agents: usize,
        edges: &[(usize, usize)],
        w: Array2<f64>,
        a: Array2<f64>,
    ) -> Result<Self, GraphError> {
        if w.dim() != (num_agents, num_agents) || a.dim() != (num_agents, num_agents) {
            return Err(GraphError::InvalidParameter(format!(
                "weight matrices must be {num_agents}x{num_agents}"
            )));
        }
        let out_neighbors = adjacency(num_agents, edges)?;
        Ok(Self::assemble(out_neighbors, w, a, 0))
    }

    fn assemble(
        mut out_neighbors: Vec<Vec<usize>>,
        w: Array2<f64>,
        a: Array2<f64>,
        resamples: u32,
    ) -> Self {
        let num_agents = out_neighbors.len();
        for list in &mut out_neighbors {
            list.sort_unstable();
        }
        let mut in_neighbors = vec![Vec::new(); num_agents];
        for (i, outs) in out_neighbors.iter().enumerate() {
            for &j in outs {
                in_neighbors[j].push(i);
            }
        }
        Self {
            num_agents,
            out_neighbors,
            in_neighbors,
            w,
            a,
            resamples,
        }
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out_neighbors[i]
    }

    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_neighbors[i]
    }

    /// Row-stochastic consensus weights.
    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    /// Column-stochastic tracking weights.
    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    /// Number of rejected draws before this topology was accepted.
    pub fn resamples(&self) -> u32 {
        self.resamples
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.out_neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, outs)| outs.iter().map(move |&j| (i, j)))
            .collect()
    }

    pub fn num_edges(&self) -> usize {
        self.out_neighbors.iter().map(Vec::len).sum()
    }

    /// Smallest positive entry over both matrices.
    pub fn min_positive_weight(&self) -> f64 {
        self.w
            .iter()
            .chain(self.a.iter())
            .copied()
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Audits stochasticity, support and diagonal positivity of both matrices
    /// together with strong connectivity of the graph.
    pub fn check(&self) -> Result<(), GraphError> {
        let n = self.num_agents;
        for i in 0..n {
            let row: f64 = self.w.row(i).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                return Err(GraphError::Assumption(format!(
                    "row {i} of W sums to {row:.17}"
                )));
            }
            let col: f64 = self.a.column(i).sum();
            if (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(GraphError::Assumption(format!(
                    "column {i} of A sums to {col:.17}"
                )));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let linked = i == j || self.in_neighbors[i].contains(&j);
                for (name, m) in [("W", &self.w), ("A", &self.a)] {
                    let v = m[[i, j]];
                    if v < 0.0 || !v.is_finite() {
                        return Err(GraphError::Assumption(format!("{name}[{i},{j}] = {v}")));
                    }
                    if linked != (v > 0.0) {
                        return Err(GraphError::Assumption(format!(
                            "{name}[{i},{j}] = {v} does not match the edge support"
                        )));
                    }
                }
            }
        }
        if !is_strongly_connected(self) {
            return Err(GraphError::Assumption("graph is not strongly connected".into()));
        }
        Ok(())
    }

    pub fn to_document(&self) -> TopologyDocument {
        TopologyDocument {
            num_agents: self.num_agents,
            edges: self.edges(),
            w: self.w.iter().copied().collect(),
            a: self.a.iter().copied().collect(),
            resamples: self.resamples,
        }
    }

    pub fn from_document(doc: &TopologyDocument) -> Result<Self, GraphError> {
        let n = doc.num_agents;
        let w = Array2::from_shape_vec((n, n), doc.w.clone())
            .map_err(|e| GraphError::InvalidParameter(e.to_string()))?;
        let a = Array2::from_shape_vec((n, n), doc.a.clone())
            .map_err(|e| GraphError::InvalidParameter(e.to_string()))?;
        let mut topo = Self::from_parts(n, &doc.edges, w, a)?;
        topo.resamples = doc.resamples;
        Ok(topo)
    }
}

/// JSON form of a topology: edge list plus dense row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDocument {
    pub num_agents: usize,
    pub edges: Vec<(usize, usize)>,
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    pub resamples: u32,
}

fn adjacency(num_agents: usize, edges: &[(usize, usize)]) -> Result<Vec<Vec<usize>>, GraphError> {
    let mut out = vec![Vec::new(); num_agents];
    for &(i, j) in edges {
        if i >= num_agents || j >= num_agents {
            return Err(GraphError::InvalidParameter(format!("edge ({i},{j}) out of range")));
        }
        if i == j {
            return Err(GraphError::InvalidParameter(format!("self-loop at {i}")));
        }
        if out[i].contains(&j) {
            return Err(GraphError::InvalidParameter(format!("duplicate edge ({i},{j})")));
        }
        out[i].push(j);
    }
    Ok(out)
}

/// Undirected Erdos-Renyi graph with Metropolis-Hastings weights (`W = A`).
///
/// Disconnected draws are rejected and redrawn with the sub-seed
/// `seed + attempt`; the number of rejections is kept on the topology.
pub fn gen_erdos_renyi(num_agents: usize, p: f64, seed: u64) -> Result<NetworkTopology, GraphError> {
    gen_erdos_renyi_with_budget(num_agents, p, seed, DEFAULT_RESAMPLE_BUDGET)
}

pub fn gen_erdos_renyi_with_budget(
    num_agents: usize,
    p: f64,
    seed: u64,
    budget: u32,
) -> Result<NetworkTopology, GraphError> {
    if num_agents < 2 {
        return Err(GraphError::InvalidParameter(format!(
            "need at least 2 agents, got {num_agents}"
        )));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(GraphError::InvalidParameter(format!("edge probability {p} not in (0,1]")));
    }
    for attempt in 0..budget {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let mut out = vec![Vec::new(); num_agents];
        for i in 0..num_agents {
            for j in (i + 1)..num_agents {
                if rng.random::<f64>() < p {
                    out[i].push(j);
                    out[j].push(i);
                }
            }
        }
        if !reachable_both_ways(&out) {
            continue;
        }
        let deg: Vec<usize> = out.iter().map(Vec::len).collect();
        let mut w = Array2::<f64>::zeros((num_agents, num_agents));
        for i in 0..num_agents {
            for &j in &out[i] {
                w[[i, j]] = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
            }
            let off: f64 = out[i].iter().map(|&j| w[[i, j]]).sum();
            w[[i, i]] = 1.0 - off;
        }
        let a = w.clone();
        return Ok(NetworkTopology::assemble(out, w, a, attempt));
    }
    Err(GraphError::ResampleBudgetExhausted {
        attempts: budget,
        num_agents,
        p,
    })
}

/// Directed cycle `i -> i+1` plus `extra_out` random distinct out-neighbors per
/// node, with uniform row weights for `W` and uniform column weights for `A`.
pub fn gen_directed_ring_plus(
    num_agents: usize,
    extra_out: usize,
    seed: u64,
) -> Result<NetworkTopology, GraphError> {
    if num_agents < 2 {
        return Err(GraphError::InvalidParameter(format!(
            "need at least 2 agents, got {num_agents}"
        )));
    }
    if extra_out + 2 > num_agents {
        return Err(GraphError::InvalidParameter(format!(
            "extra_out = {extra_out} exceeds I - 2 = {}",
            num_agents - 2
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(); num_agents];
    for (i, outs) in out.iter_mut().enumerate() {
        let succ = (i + 1) % num_agents;
        outs.push(succ);
        // candidates exclude self and the cycle successor
        let candidates: Vec<usize> = (0..num_agents).filter(|&j| j != i && j != succ).collect();
        for idx in sample(&mut rng, candidates.len(), extra_out).into_iter() {
            outs.push(candidates[idx]);
        }
    }
    let mut in_deg = vec![0usize; num_agents];
    for outs in &out {
        for &j in outs {
            in_deg[j] += 1;
        }
    }
    let mut w = Array2::<f64>::zeros((num_agents, num_agents));
    let mut a = Array2::<f64>::zeros((num_agents, num_agents));
    for j in 0..num_agents {
        let col = 1.0 / (1.0 + out[j].len() as f64);
        a[[j, j]] = col;
        for &i in &out[j] {
            // edge j -> i
            a[[i, j]] = col;
            w[[i, j]] = 1.0 / (1.0 + in_deg[i] as f64);
        }
        w[[j, j]] = 1.0 / (1.0 + in_deg[j] as f64);
    }
    Ok(NetworkTopology::assemble(out, w, a, 0))
}

/// True iff every ordered pair of agents is connected by a directed path.
pub fn is_strongly_connected(topology: &NetworkTopology) -> bool {
    reachable_both_ways(&topology.out_neighbors)
}

/// Forward and backward BFS from node 0 both reach every node.
fn reachable_both_ways(out: &[Vec<usize>]) -> bool {
    let n = out.len();
    if n == 0 {
        return false;
    }
    let mut rev = vec![Vec::new(); n];
    for (i, outs) in out.iter().enumerate() {
        for &j in outs {
            rev[j].push(i);
        }
    }
    bfs_count(out) == n && bfs_count(&rev) == n
}

fn bfs_count(adj: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count
}
