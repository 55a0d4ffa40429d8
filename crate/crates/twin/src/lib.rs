//! Digital twin of a stream-processing FIFO queue.
//!
//! The twin keeps a belief over a discretized "pressure" state `D(t)` in
//! `[0, 4]`, observes queue lengths `O(t)` produced under a processing
//! capacity `U(t)` of 16 or 32 threads, and recommends the capacity for the
//! next step. Observations are synthesized by interpolating the measured
//! tables; the ground truth follows a fixed piecewise schedule.

mod config;
mod experiment;
mod filter;
mod ground_truth;
mod mm1;
mod tables;

pub use config::{GroundTruthMode, TwinConfig};
pub use experiment::{run_experiment, ExperimentLog, ExperimentRow};
pub use filter::{correct, estimate_control, predict, recommend_control, Belief};
pub use ground_truth::ground_truth_step;
pub use mm1::calc_lq;
pub use tables::{observe, Control, TableRow, TwinTables};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TwinError {
    #[error("unstable queue: arrival rate {lambda} >= service rate {mu}")]
    Unstable { lambda: f64, mu: f64 },
    #[error("invalid rate: {0}")]
    InvalidRate(f64),
    #[error("invalid twin config: {0}")]
    InvalidConfig(String),
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
    #[error("observation must be positive, got {0}")]
    NonPositiveObservation(f64),
    #[error("reading twin config: {0}")]
    Io(String),
}
