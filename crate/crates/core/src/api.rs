//! Wire documents exchanged over HTTP between agents, the control plane and
//! the CLI. All are JSON-encoded.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::lifecycle::{ContainerStatus, PodConditionSet};
use crate::model::{ConfigMapSpec, LabelMap, NodeLabels, PodSpec, Toleration};

/// Body of `POST /pods` on an agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatePodRequest {
    pub uid: u64,
    pub pod: PodSpec,
    #[serde(default)]
    pub configmaps: BTreeMap<String, ConfigMapSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationOutcome {
    /// The group was already empty.
    NoLiveProcesses,
    /// The group exited after the termination signal.
    Terminated,
    /// The group survived the grace period and was killed.
    Killed,
    SignalFailed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerTermination {
    pub name: String,
    pub pgid: Option<i32>,
    pub outcome: TerminationOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationReport {
    pub pod: String,
    pub containers: Vec<ContainerTermination>,
}

impl TerminationReport {
    pub fn had_live_processes(&self) -> bool {
        self.containers
            .iter()
            .any(|c| !matches!(c.outcome, TerminationOutcome::NoLiveProcesses))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeStatus {
    Ready,
    NotReady,
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeStatus::Ready => f.write_str("Ready"),
            NodeStatus::NotReady => f.write_str("NotReady"),
        }
    }
}

/// Body of `POST /nodes` on the control plane.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRegistration {
    pub nodename: String,
    /// Where the control plane reaches the agent API (`host:port`).
    pub address: String,
    /// Advertised pod IP; may be shared by many nodes.
    pub pod_ip: String,
    pub kubelet_port: u16,
    pub labels: NodeLabels,
    #[serde(default)]
    pub extra_labels: LabelMap,
    pub heartbeat_interval_s: u64,
}

/// Body of `POST /nodes/<name>/heartbeat`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heartbeat {
    pub status: NodeStatus,
    pub labels: NodeLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub name: String,
    pub status: NodeStatus,
    pub labels: NodeLabels,
    pub extra_labels: LabelMap,
    pub taints: Vec<Toleration>,
    pub address: String,
    pub pod_ip: String,
    pub kubelet_port: u16,
    pub pods: Vec<String>,
    pub last_heartbeat: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodView {
    pub name: String,
    pub uid: u64,
    pub node: Option<String>,
    pub owner: Option<String>,
    pub phase: String,
    pub ready: bool,
    pub conditions: PodConditionSet,
    pub start_time: Option<DateTime<Utc>>,
    pub containers: Vec<ContainerStatus>,
    pub state_uid: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentView {
    pub name: String,
    pub replicas: u32,
    pub live: u32,
    pub ready: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApplyOutcome {
    Created,
    Configured,
    Unchanged,
    Invalid(String),
}

impl fmt::Display for ApplyOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ApplyOutcome::Created => f.write_str("created"),
            ApplyOutcome::Configured => f.write_str("configured"),
            ApplyOutcome::Unchanged => f.write_str("unchanged"),
            ApplyOutcome::Invalid(reason) => write!(f, "invalid: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyResult {
    pub kind: String,
    pub name: String,
    pub outcome: ApplyOutcome,
}

impl fmt::Display for ApplyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} {}", self.kind, self.name, self.outcome)
    }
}

/// Error body returned by both HTTP surfaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// Per-pod CPU utilization gauge served by agents, in percent of one core.
pub const POD_CPU_METRIC: &str = "jiriaf_pod_cpu_usage";
