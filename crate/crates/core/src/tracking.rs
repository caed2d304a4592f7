//! Gradient tracking by perturbed push-sum.
//!
//! Asynchronous agents exchange *cumulative* mass counters per directed edge:
//! `rho_ji`/`sigma_ji` is everything agent `i` ever pushed towards `j`, and
//! `j` keeps buffers of the part it already absorbed. Delayed or overtaken
//! packets therefore never lose mass; at any instant
//!
//! ```text
//! sum_i z_i + sum_{j->i} (rho_ij - rho~_ij) = sum_i grad f_i(x_i)
//! sum_i phi_i + sum_{j->i} (sigma_ij - sigma~_ij) = I
//! ```
//!
//! which [`mass_conservation_audit`] measures.

use std::borrow::Borrow;

use ndarray::{Array1, Array2, ArrayView1, Zip};
use thiserror::Error;

use crate::netgraph::NetworkTopology;

/// Gap above which the conservation audit fails.
pub const AUDIT_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum TrackingError {
    #[error("agent {agent}: push-sum weight became non-positive ({phi})")]
    NonPositivePhi { agent: usize, phi: f64 },
    #[error("agent {agent}: expected {expected} in-neighbor slots, got {got}")]
    SlotMismatch { agent: usize, expected: usize, got: usize },
}

/// Counters `(rho_ij, sigma_ij)` as last generated by in-neighbor `j`.
#[derive(Debug, Clone, Copy)]
pub struct ReceivedMass<'a> {
    pub rho: ArrayView1<'a, f64>,
    pub sigma: f64,
}

/// Toggles for mutation testing of the protocol; all off in normal runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProtocolFaults {
    pub skip_buffer_update: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingState {
    agent: usize,
    z: Array1<f64>,
    phi: f64,
    y: Array1<f64>,
    a_self: f64,
    out_neighbors: Vec<usize>,
    a_out: Vec<f64>,
    rho_out: Vec<Array1<f64>>,
    sigma_out: Vec<f64>,
    in_neighbors: Vec<usize>,
    rho_buf: Vec<Array1<f64>>,
    sigma_buf: Vec<f64>,
}

impl TrackingState {
    /// `z = y = grad f_i(x_i^0)`, `phi = 1`, all counters and buffers zero.
    pub fn new(agent: usize, topology: &NetworkTopology, initial_grad: Array1<f64>) -> Self {
        let n = initial_grad.len();
        let a = topology.a();
        let out_neighbors = topology.out_neighbors(agent).to_vec();
        let in_neighbors = topology.in_neighbors(agent).to_vec();
        Self {
            agent,
            y: initial_grad.clone(),
            z: initial_grad,
            phi: 1.0,
            a_self: a[[agent, agent]],
            a_out: out_neighbors.iter().map(|&j| a[[j, agent]]).collect(),
            rho_out: vec![Array1::zeros(n); out_neighbors.len()],
            sigma_out: vec![0.0; out_neighbors.len()],
            rho_buf: vec![Array1::zeros(n); in_neighbors.len()],
            sigma_buf: vec![0.0; in_neighbors.len()],
            out_neighbors,
            in_neighbors,
        }
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn z(&self) -> &Array1<f64> {
        &self.z
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn out_neighbors(&self) -> &[usize] {
        &self.out_neighbors
    }

    pub fn in_neighbors(&self) -> &[usize] {
        &self.in_neighbors
    }

    /// Cumulative counters this agent generated for out-neighbor `receiver`.
    pub fn counters_for(&self, receiver: usize) -> Option<(&Array1<f64>, f64)> {
        let slot = self.out_neighbors.iter().position(|&j| j == receiver)?;
        Some((&self.rho_out[slot], self.sigma_out[slot]))
    }

    /// Buffered counters last absorbed from in-neighbor slot `slot`.
    pub fn buffer(&self, slot: usize) -> (&Array1<f64>, f64) {
        (&self.rho_buf[slot], self.sigma_buf[slot])
    }

    /// Sum step, push step and mass-buffer update; returns the new `y = z / phi`.
    ///
    /// `received[s]` holds the freshest counters from in-neighbor slot `s`, or
    /// `None` if nothing has arrived yet (equivalent to zero counters).
    pub fn robust_update(
        &mut self,
        received: &[Option<ReceivedMass<'_>>],
        perturbation: ArrayView1<f64>,
        faults: ProtocolFaults,
    ) -> Result<&Array1<f64>, TrackingError> {
        if received.len() != self.in_neighbors.len() {
            return Err(TrackingError::SlotMismatch {
                agent: self.agent,
                expected: self.in_neighbors.len(),
                got: received.len(),
            });
        }
        // sum step
        let mut z_half = &self.z + &perturbation;
        let mut phi_half = self.phi;
        for (slot, mass) in received.iter().enumerate() {
            if let Some(mass) = mass {
                Zip::from(&mut z_half)
                    .and(&mass.rho)
                    .and(&self.rho_buf[slot])
                    .for_each(|z, &r, &b| *z += r - b);
                phi_half += mass.sigma - self.sigma_buf[slot];
            }
        }
        // push step
        for (slot, &a_ji) in self.a_out.iter().enumerate() {
            self.rho_out[slot].scaled_add(a_ji, &z_half);
            self.sigma_out[slot] += a_ji * phi_half;
        }
        self.z = z_half * self.a_self;
        self.phi = self.a_self * phi_half;
        // mass-buffer update
        if !faults.skip_buffer_update {
            for (slot, mass) in received.iter().enumerate() {
                if let Some(mass) = mass {
                    self.rho_buf[slot].assign(&mass.rho);
                    self.sigma_buf[slot] = mass.sigma;
                }
            }
        }
        if !(self.phi > 0.0) {
            return Err(TrackingError::NonPositivePhi {
                agent: self.agent,
                phi: self.phi,
            });
        }
        self.y = &self.z / self.phi;
        Ok(&self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassAudit {
    pub z_gap: f64,
    pub phi_gap: f64,
}

impl MassAudit {
    pub fn passes(&self) -> bool {
        self.z_gap <= AUDIT_TOL && self.phi_gap <= AUDIT_TOL
    }
}

/// Compares total mass (held plus in flight) with `sum_i grad f_i(x_i)` and `I`.
/// In-flight mass on edge `j -> i` is the sender's current counter minus the
/// receiver's buffer.
pub fn mass_conservation_audit<S: Borrow<TrackingState>>(states: &[S], gradient_sum: ArrayView1<f64>) -> MassAudit {
    let mut z_total = -&gradient_sum;
    let mut phi_total = -(states.len() as f64);
    for st in states {
        let st = st.borrow();
        z_total += &st.z;
        phi_total += st.phi;
        for (slot, &j) in st.in_neighbors.iter().enumerate() {
            let (rho, sigma) = states[j]
                .borrow()
                .counters_for(st.agent)
                .expect("in-neighbor lists mirror out-neighbor lists");
            Zip::from(&mut z_total)
                .and(rho)
                .and(&st.rho_buf[slot])
                .for_each(|t, &r, &b| *t += r - b);
            phi_total += sigma - st.sigma_buf[slot];
        }
    }
    MassAudit {
        z_gap: z_total.dot(&z_total).sqrt(),
        phi_gap: phi_total.abs(),
    }
}

/// Synchronous perturbed push-sum over all agents at once.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncTracking {
    z: Vec<Array1<f64>>,
    phi: Vec<f64>,
    y: Vec<Array1<f64>>,
}

impl SyncTracking {
    pub fn new(initial_grads: Vec<Array1<f64>>) -> Self {
        Self {
            phi: vec![1.0; initial_grads.len()],
            y: initial_grads.clone(),
            z: initial_grads,
        }
    }

    pub fn z(&self) -> &[Array1<f64>] {
        &self.z
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn y(&self) -> &[Array1<f64>] {
        &self.y
    }

    /// `z_i <- sum_j a_ij (z_j + delta_j)`, `phi_i <- sum_j a_ij phi_j`, `y_i = z_i / phi_i`.
    pub fn update(&mut self, a: &Array2<f64>, grad_deltas: &[Array1<f64>]) -> Result<(), TrackingError> {
        let num = self.z.len();
        let shifted: Vec<Array1<f64>> = self.z.iter().zip(grad_deltas).map(|(z, d)| z + d).collect();
        let n = shifted.first().map_or(0, Array1::len);
        let phi_old = self.phi.clone();
        for i in 0..num {
            let mut zi = Array1::zeros(n);
            let mut phi = 0.0;
            for j in 0..num {
                let aij = a[[i, j]];
                if aij != 0.0 {
                    zi.scaled_add(aij, &shifted[j]);
                    phi += aij * phi_old[j];
                }
            }
            if !(phi > 0.0) {
                return Err(TrackingError::NonPositivePhi { agent: i, phi });
            }
            self.y[i] = &zi / phi;
            self.z[i] = zi;
            self.phi[i] = phi;
        }
        Ok(())
    }
}
