//! Horizontal pod autoscaling for deployments.
//!
//! [`desired_replicas`] is the ceiling-of-ratio formula, [`filter_unready`]
//! decides which pods' CPU samples may be trusted, and [`HpaState`] applies
//! both with a downscale stabilization window.

mod formula;
mod gate;
mod hpa;

pub use formula::desired_replicas;
pub use gate::{filter_unready, GatePod, ReadinessGateConfig};
pub use hpa::{Decision, DecisionReason, HpaState, PodSample};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutoscaleError {
    #[error("target metric must be positive, got {0}")]
    InvalidTarget(f64),
    #[error("current metric must be nonnegative, got {0}")]
    InvalidMetric(f64),
    #[error("invalid autoscaler config: {0}")]
    InvalidConfig(String),
}
