//! The control plane: owns cluster state, places pods on agent nodes,
//! keeps deployments at their replica counts, runs autoscalers against
//! scraped CPU metrics, and serves the cluster API.

pub mod autoscale;
pub mod journal;
pub mod reconcile;
pub mod scheduler;
pub mod server;
pub mod state;

use std::path::PathBuf;
use std::time::Duration;

use jiriaf_autoscaler::ReadinessGateConfig;

pub use journal::{Journal, JournalEntry};
pub use reconcile::{plan, PlanOptions};
pub use scheduler::{feasible, schedule, tolerates};
pub use server::{start_control_plane, AutoscalerView, ControlPlaneHandle, StateDoc};
pub use state::{aggregate_conditions, ClusterState, Mutation, NodeRecord, PodRecord, StateError, TargetRequest};

#[derive(Debug, thiserror::Error)]
pub enum ControlPlaneError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("journal line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Metrics(#[from] jiriaf_metrics::MetricsError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlPlaneConfig {
    pub listen: String,
    /// Holds the journal and the metric store; in-memory when absent.
    pub data_dir: Option<PathBuf>,
    pub reconcile_interval: Duration,
    pub hpa_interval: Duration,
    pub heartbeat_timeout_factor: u32,
    pub gate: ReadinessGateConfig,
    pub stabilization_window_s: u64,
    pub scrape_interval_s: u64,
    /// Per-request timeout for calls to agents.
    pub agent_timeout: Duration,
}

impl Default for ControlPlaneConfig {
    fn default() -> Self {
        ControlPlaneConfig {
            listen: "127.0.0.1:8080".into(),
            data_dir: None,
            reconcile_interval: Duration::from_secs(2),
            hpa_interval: Duration::from_secs(15),
            heartbeat_timeout_factor: 3,
            gate: ReadinessGateConfig::default(),
            stabilization_window_s: 300,
            scrape_interval_s: 5,
            agent_timeout: Duration::from_secs(10),
        }
    }
}

impl ControlPlaneConfig {
    pub fn validate(&self) -> Result<(), ControlPlaneError> {
        self.gate
            .validate()
            .map_err(|e| ControlPlaneError::Config(e.to_string()))?;
        if self.reconcile_interval.is_zero() || self.hpa_interval.is_zero() {
            return Err(ControlPlaneError::Config("tick intervals must be positive".into()));
        }
        if self.heartbeat_timeout_factor == 0 || self.scrape_interval_s == 0 {
            return Err(ControlPlaneError::Config(
                "heartbeat timeout factor and scrape interval must be positive".into(),
            ));
        }
        Ok(())
    }
}
