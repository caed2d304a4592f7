//! Simulation library for asynchronous decentralized composite optimization
//! over directed networks: SCA local solves, delayed consensus and robust
//! push-sum gradient tracking, with a synchronous baseline.

pub mod engine;
pub mod exec;
pub mod localsolve;
pub mod metrics;
pub mod netgraph;
pub mod objective;
pub mod trace;
pub mod tracking;

pub use exec::Execution;
