//! Cluster state and the mutations that change it. Every change goes
//! through [`ClusterState::apply`], so replaying a journal of mutations
//! reproduces the state exactly.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use jiriaf_core::api::{DeploymentView, Heartbeat, NodeRegistration, NodeStatus, NodeView, PodView};
use jiriaf_core::{
    AutoscalerSpec, ConfigMapSpec, DeploymentSpec, LabelMap, NodeLabels, PodCondition, PodConditionSet, PodPhase,
    PodSpec, PodStatus, Toleration,
};
use jiriaf_metrics::TargetOwner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Labels every agent node carries besides its advertised ones.
pub const ROLE_LABEL: &str = "kubernetes.io/role";
pub const HOSTNAME_LABEL: &str = "kubernetes.io/hostname";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("node {0} is already registered")]
    DuplicateNode(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("unknown pod {0}")]
    UnknownPod(String),
    #[error("pod {0} already exists")]
    PodExists(String),
    #[error("unknown deployment {0}")]
    UnknownDeployment(String),
    #[error("unknown autoscaler {0}")]
    UnknownAutoscaler(String),
    #[error("unknown configmap {0}")]
    UnknownConfigMap(String),
    #[error("node {0} is not ready")]
    NodeNotReady(String),
    #[error("status for pod {pod} carries uid {got}, expected {want}")]
    UidMismatch { pod: String, want: u64, got: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub name: String,
    pub labels: NodeLabels,
    pub extra_labels: LabelMap,
    pub taints: Vec<Toleration>,
    pub status: NodeStatus,
    pub address: String,
    pub pod_ip: String,
    pub kubelet_port: u16,
    pub heartbeat_interval_s: u64,
    pub registered_at: DateTime<Utc>,
    pub last_heartbeat: DateTime<Utc>,
}

impl NodeRecord {
    /// Every label the scheduler matches against.
    pub fn label_map(&self) -> LabelMap {
        let mut map = LabelMap::new();
        map.insert(ROLE_LABEL.to_string(), "agent".to_string());
        map.insert(HOSTNAME_LABEL.to_string(), self.name.clone());
        map.extend(self.extra_labels.clone());
        map.extend(self.labels.to_map());
        map
    }

    pub fn is_ready(&self) -> bool {
        self.status == NodeStatus::Ready
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodRecord {
    pub spec: PodSpec,
    pub uid: u64,
    /// Owning deployment, if any.
    pub owner: Option<String>,
    pub node: Option<String>,
    pub created_at: DateTime<Utc>,
    pub scheduled_at: Option<DateTime<Utc>>,
    /// The bound node accepted the pod.
    pub dispatched: bool,
    pub dispatch_error: Option<String>,
    /// Last status the agent reported.
    pub reported: Option<PodStatus>,
    /// The bound node went away while the pod was on it.
    pub lost: bool,
    pub deleting: bool,
}

impl PodRecord {
    /// Ordinal suffix of a deployment pod (`web-3` → 3).
    pub fn ordinal(&self) -> Option<u32> {
        let owner = self.owner.as_deref()?;
        self.spec.name.strip_prefix(owner)?.strip_prefix('-')?.parse().ok()
    }

    pub fn reported_phase(&self) -> Option<PodPhase> {
        self.reported.as_ref().map(|s| s.phase)
    }

    /// Finished with a terminal phase on its node.
    pub fn is_finished(&self) -> bool {
        matches!(self.reported_phase(), Some(PodPhase::Failed | PodPhase::Succeeded))
    }

    /// Counts toward its deployment's replicas.
    pub fn is_live(&self) -> bool {
        !self.lost && !self.deleting && !self.is_finished()
    }

    pub fn is_ready(&self) -> bool {
        !self.lost && !self.deleting && self.reported.as_ref().is_some_and(|s| s.ready)
    }

    pub fn phase_str(&self) -> String {
        if self.lost {
            "Lost".into()
        } else if self.deleting {
            "Terminating".into()
        } else if let Some(s) = &self.reported {
            s.phase.to_string()
        } else if self.node.is_some() {
            "Scheduled".into()
        } else {
            "Pending".into()
        }
    }
}

/// Pod conditions as seen by the cluster: scheduled at binding time,
/// initialized at the pod's start on the node, ready per the agent with the
/// first container's start as transition time.
pub fn aggregate_conditions(pod: &PodRecord) -> PodConditionSet {
    let scheduled = Some(PodCondition::new(
        pod.node.is_some(),
        pod.scheduled_at.unwrap_or(pod.created_at),
    ));
    let Some(reported) = &pod.reported else {
        return PodConditionSet {
            scheduled,
            initialized: None,
            ready: None,
        };
    };
    let ready_at = reported
        .conditions
        .ready
        .map(|c| c.last_transition_time)
        .unwrap_or(reported.start_time);
    PodConditionSet {
        scheduled,
        initialized: Some(PodCondition::new(true, reported.start_time)),
        ready: Some(PodCondition::new(pod.is_ready(), ready_at)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoscalerRecord {
    pub spec: AutoscalerSpec,
    pub last_scale_time: Option<DateTime<Utc>>,
}

/// A metrics endpoint to scrape, in registration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetRequest {
    pub owner: TargetOwner,
    pub ip: String,
    pub port: u16,
    /// Where the endpoint is actually reached (`host:port`).
    pub route: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    PutConfigMap { spec: ConfigMapSpec },
    RemoveConfigMap { name: String },
    PutPod { spec: PodSpec, at: DateTime<Utc> },
    PutDeployment { spec: DeploymentSpec },
    RemoveDeployment { name: String },
    PutAutoscaler { spec: AutoscalerSpec },
    RemoveAutoscaler { name: String },
    RegisterNode { registration: NodeRegistration, at: DateTime<Utc> },
    Heartbeat { node: String, heartbeat: Heartbeat, at: DateTime<Utc> },
    NodeNotReady { node: String },
    CreateReplica { deployment: String, name: String, at: DateTime<Utc> },
    BindPod { pod: String, node: String, at: DateTime<Utc> },
    PodDispatched { pod: String, error: Option<String> },
    PodReported { pod: String, status: PodStatus },
    PodLost { pod: String },
    MarkDeleting { pod: String },
    RemovePod { pod: String },
    Scaled { autoscaler: String, replicas: u32, at: DateTime<Utc> },
    RegisterTarget { target: TargetRequest },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub nodes: BTreeMap<String, NodeRecord>,
    pub pods: BTreeMap<String, PodRecord>,
    pub deployments: BTreeMap<String, DeploymentSpec>,
    pub autoscalers: BTreeMap<String, AutoscalerRecord>,
    pub configmaps: BTreeMap<String, ConfigMapSpec>,
    pub targets: Vec<TargetRequest>,
    /// Incremented by every applied mutation.
    pub revision: u64,
    pub next_uid: u64,
}

impl ClusterState {
    fn pod_mut(&mut self, name: &str) -> Result<&mut PodRecord, StateError> {
        self.pods.get_mut(name).ok_or_else(|| StateError::UnknownPod(name.to_string()))
    }

    fn new_pod(&mut self, spec: PodSpec, owner: Option<String>, at: DateTime<Utc>) -> Result<(), StateError> {
        if self.pods.contains_key(&spec.name) {
            return Err(StateError::PodExists(spec.name));
        }
        self.next_uid += 1;
        let rec = PodRecord {
            uid: self.next_uid,
            owner,
            node: None,
            created_at: at,
            scheduled_at: None,
            dispatched: false,
            dispatch_error: None,
            reported: None,
            lost: false,
            deleting: false,
            spec,
        };
        self.pods.insert(rec.spec.name.clone(), rec);
        Ok(())
    }

    fn put_target(&mut self, target: TargetRequest) {
        self.targets.retain(|t| t.owner != target.owner);
        self.targets.push(target);
    }

    /// Applies one mutation. On error the state is unchanged.
    pub fn apply(&mut self, m: &Mutation) -> Result<(), StateError> {
        match m {
            Mutation::PutConfigMap { spec } => {
                self.configmaps.insert(spec.name.clone(), spec.clone());
            }
            Mutation::RemoveConfigMap { name } => {
                self.configmaps
                    .remove(name)
                    .ok_or_else(|| StateError::UnknownConfigMap(name.clone()))?;
            }
            Mutation::PutPod { spec, at } => self.new_pod(spec.clone(), None, *at)?,
            Mutation::PutDeployment { spec } => {
                self.deployments.insert(spec.name.clone(), spec.clone());
            }
            Mutation::RemoveDeployment { name } => {
                self.deployments
                    .remove(name)
                    .ok_or_else(|| StateError::UnknownDeployment(name.clone()))?;
            }
            Mutation::PutAutoscaler { spec } => {
                let last = self.autoscalers.get(&spec.name).and_then(|a| a.last_scale_time);
                self.autoscalers.insert(
                    spec.name.clone(),
                    AutoscalerRecord {
                        spec: spec.clone(),
                        last_scale_time: last,
                    },
                );
            }
            Mutation::RemoveAutoscaler { name } => {
                self.autoscalers
                    .remove(name)
                    .ok_or_else(|| StateError::UnknownAutoscaler(name.clone()))?;
            }
            Mutation::RegisterNode { registration: r, at } => {
                if self.nodes.get(&r.nodename).is_some_and(NodeRecord::is_ready) {
                    return Err(StateError::DuplicateNode(r.nodename.clone()));
                }
                self.nodes.insert(
                    r.nodename.clone(),
                    NodeRecord {
                        name: r.nodename.clone(),
                        labels: r.labels.clone(),
                        extra_labels: r.extra_labels.clone(),
                        taints: vec![Toleration::provider_taint()],
                        status: NodeStatus::Ready,
                        address: r.address.clone(),
                        pod_ip: r.pod_ip.clone(),
                        kubelet_port: r.kubelet_port,
                        heartbeat_interval_s: r.heartbeat_interval_s.max(1),
                        registered_at: *at,
                        last_heartbeat: *at,
                    },
                );
                self.put_target(TargetRequest {
                    owner: TargetOwner::node(r.nodename.clone()),
                    ip: r.pod_ip.clone(),
                    port: r.kubelet_port,
                    route: r.address.clone(),
                    path: "/metrics".into(),
                });
            }
            Mutation::Heartbeat { node, heartbeat, at } => {
                let rec = self
                    .nodes
                    .get_mut(node)
                    .ok_or_else(|| StateError::UnknownNode(node.clone()))?;
                rec.status = heartbeat.status;
                rec.labels = heartbeat.labels.clone();
                rec.last_heartbeat = *at;
            }
            Mutation::NodeNotReady { node } => {
                let rec = self
                    .nodes
                    .get_mut(node)
                    .ok_or_else(|| StateError::UnknownNode(node.clone()))?;
                rec.status = NodeStatus::NotReady;
            }
            Mutation::CreateReplica { deployment, name, at } => {
                let dep = self
                    .deployments
                    .get(deployment)
                    .ok_or_else(|| StateError::UnknownDeployment(deployment.clone()))?;
                let mut spec = dep.template.clone();
                spec.name = name.clone();
                self.new_pod(spec, Some(deployment.clone()), *at)?;
            }
            Mutation::BindPod { pod, node, at } => {
                match self.nodes.get(node) {
                    None => return Err(StateError::UnknownNode(node.clone())),
                    Some(n) if !n.is_ready() => return Err(StateError::NodeNotReady(node.clone())),
                    Some(_) => {}
                }
                let rec = self.pod_mut(pod)?;
                rec.node = Some(node.clone());
                rec.scheduled_at = Some(*at);
            }
            Mutation::PodDispatched { pod, error } => {
                let rec = self.pod_mut(pod)?;
                rec.dispatched = error.is_none();
                rec.dispatch_error = error.clone();
            }
            Mutation::PodReported { pod, status } => {
                let rec = self.pod_mut(pod)?;
                if status.uid != rec.uid {
                    return Err(StateError::UidMismatch {
                        pod: pod.clone(),
                        want: rec.uid,
                        got: status.uid,
                    });
                }
                rec.dispatched = true;
                rec.dispatch_error = None;
                rec.reported = Some(status.clone());
            }
            Mutation::PodLost { pod } => self.pod_mut(pod)?.lost = true,
            Mutation::MarkDeleting { pod } => self.pod_mut(pod)?.deleting = true,
            Mutation::RemovePod { pod } => {
                self.pods.remove(pod).ok_or_else(|| StateError::UnknownPod(pod.clone()))?;
            }
            Mutation::Scaled { autoscaler, replicas, at } => {
                let hpa = self
                    .autoscalers
                    .get_mut(autoscaler)
                    .ok_or_else(|| StateError::UnknownAutoscaler(autoscaler.clone()))?;
                let dep = self
                    .deployments
                    .get_mut(&hpa.spec.target_deployment)
                    .ok_or_else(|| StateError::UnknownDeployment(hpa.spec.target_deployment.clone()))?;
                dep.replicas = *replicas;
                hpa.last_scale_time = Some(*at);
            }
            Mutation::RegisterTarget { target } => self.put_target(target.clone()),
        }
        self.revision += 1;
        Ok(())
    }

    /// Pods bound to `node`, excluding lost ones.
    pub fn pods_on(&self, node: &str) -> impl Iterator<Item = &PodRecord> + '_ {
        let node = node.to_string();
        self.pods
            .values()
            .filter(move |p| !p.lost && p.node.as_deref() == Some(node.as_str()))
    }

    pub fn node_views(&self) -> Vec<NodeView> {
        self.nodes
            .values()
            .map(|n| NodeView {
                name: n.name.clone(),
                status: n.status,
                labels: n.labels.clone(),
                extra_labels: n.extra_labels.clone(),
                taints: n.taints.clone(),
                address: n.address.clone(),
                pod_ip: n.pod_ip.clone(),
                kubelet_port: n.kubelet_port,
                pods: self.pods_on(&n.name).map(|p| p.spec.name.clone()).collect(),
                last_heartbeat: n.last_heartbeat,
            })
            .collect()
    }

    pub fn pod_views(&self) -> Vec<PodView> {
        self.pods
            .values()
            .map(|p| PodView {
                name: p.spec.name.clone(),
                uid: p.uid,
                node: p.node.clone(),
                owner: p.owner.clone(),
                phase: p.phase_str(),
                ready: p.is_ready(),
                conditions: aggregate_conditions(p),
                start_time: p.reported.as_ref().map(|s| s.start_time),
                containers: p.reported.as_ref().map(|s| s.containers.clone()).unwrap_or_default(),
                state_uid: p.reported.as_ref().map(PodStatus::summary_uid).unwrap_or_else(|| "-".into()),
            })
            .collect()
    }

    pub fn deployment_views(&self) -> Vec<DeploymentView> {
        self.deployments
            .values()
            .map(|d| {
                let owned: Vec<&PodRecord> = self
                    .pods
                    .values()
                    .filter(|p| p.owner.as_deref() == Some(d.name.as_str()))
                    .collect();
                DeploymentView {
                    name: d.name.clone(),
                    replicas: d.replicas,
                    live: owned.iter().filter(|p| p.is_live()).count() as u32,
                    ready: owned.iter().filter(|p| p.is_ready()).count() as u32,
                }
            })
            .collect()
    }
}
