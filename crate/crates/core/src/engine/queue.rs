//! Time-ordered event queue with a deterministic tie rule.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use ndarray::Array1;

/// Message from `sender` to `receiver` carrying `v` and the cumulative mass counters.
#[derive(Debug, Clone)]
pub struct Packet {
    pub sender: usize,
    pub receiver: usize,
    /// Sender's global-iteration stamp: the packet carries `v^generation`.
    pub generation: u64,
    pub v: Arc<Array1<f64>>,
    pub rho: Array1<f64>,
    pub sigma: f64,
    pub send_time: f64,
    pub arrival_time: f64,
}

#[derive(Debug, Clone)]
pub enum Event {
    Arrival(Box<Packet>),
    Compute { agent: usize },
}

impl Event {
    fn rank(&self) -> u8 {
        match self {
            Event::Arrival(_) => 0,
            Event::Compute { .. } => 1,
        }
    }

    fn agent(&self) -> usize {
        match self {
            Event::Arrival(p) => p.receiver,
            Event::Compute { agent } => *agent,
        }
    }
}

struct Entry {
    time: f64,
    seq: u64,
    event: Event,
}

impl Entry {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.event.rank().cmp(&other.event.rank()))
            .then(self.event.agent().cmp(&other.event.agent()))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

/// Pops the earliest event; ties go to arrivals before computes, then the lower
/// agent id (the receiver for arrivals), then insertion order.
#[derive(Default)]
pub struct EventQueue {
    heap: BinaryHeap<Entry>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { time, seq, event });
    }

    pub fn pop(&mut self) -> Option<(f64, Event)> {
        self.heap.pop().map(|e| (e.time, e.event))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
