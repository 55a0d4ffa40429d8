//! Typed workload specs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ident::{identifier_problem, normalize_mount_path};

/// Label key carrying the node type (`JIRIAF_NODETYPE`).
pub const LABEL_NODETYPE: &str = "jiriaf.nodetype";
/// Label key carrying the site (`JIRIAF_SITE`).
pub const LABEL_SITE: &str = "jiriaf.site";
/// Label key carrying the remaining node lifetime in seconds.
pub const LABEL_ALIVETIME: &str = "jiriaf.alivetime";

/// Taint every virtual node carries; pods must tolerate it to land there.
pub const PROVIDER_TAINT_KEY: &str = "virtual-kubelet.io/provider";
pub const PROVIDER_TAINT_VALUE: &str = "mock";

pub type LabelMap = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigMapSpec {
    pub name: String,
    /// filename -> script text
    pub data: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeMount {
    pub volume_name: String,
    /// Relative, normalized path below the container directory.
    pub mount_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerSpec {
    pub name: String,
    /// Names the script volume; carried for fidelity, not interpreted.
    pub image: String,
    pub command: Vec<String>,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default)]
    pub volume_mounts: Vec<VolumeMount>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AffinityOperator {
    In,
    Gt,
}

impl fmt::Display for AffinityOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AffinityOperator::In => f.write_str("In"),
            AffinityOperator::Gt => f.write_str("Gt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffinityRule {
    pub key: String,
    pub operator: AffinityOperator,
    pub values: Vec<String>,
}

impl AffinityRule {
    pub fn is_in(key: impl Into<String>, values: &[&str]) -> Self {
        AffinityRule {
            key: key.into(),
            operator: AffinityOperator::In,
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }

    pub fn greater_than(key: impl Into<String>, value: i64) -> Self {
        AffinityRule {
            key: key.into(),
            operator: AffinityOperator::Gt,
            values: vec![value.to_string()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaintEffect {
    NoSchedule,
}

impl fmt::Display for TaintEffect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("NoSchedule")
    }
}

/// A toleration on a pod, or (with the same shape) a taint on a node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Toleration {
    pub key: String,
    pub value: String,
    pub effect: TaintEffect,
}

impl Toleration {
    /// The implicit taint on every agent node.
    pub fn provider_taint() -> Self {
        Toleration {
            key: PROVIDER_TAINT_KEY.to_string(),
            value: PROVIDER_TAINT_VALUE.to_string(),
            effect: TaintEffect::NoSchedule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Volume {
    pub name: String,
    pub config_map: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PodSpec {
    pub name: String,
    #[serde(default)]
    pub labels: LabelMap,
    pub containers: Vec<ContainerSpec>,
    #[serde(default)]
    pub volumes: Vec<Volume>,
    #[serde(default)]
    pub node_selector: LabelMap,
    #[serde(default)]
    pub tolerations: Vec<Toleration>,
    #[serde(default)]
    pub affinity: Vec<AffinityRule>,
}

impl PodSpec {
    pub fn volume(&self, name: &str) -> Option<&Volume> {
        self.volumes.iter().find(|v| v.name == name)
    }

    /// ConfigMap names referenced by this pod's volumes.
    pub fn config_map_refs(&self) -> BTreeSet<&str> {
        self.volumes.iter().map(|v| v.config_map.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentSpec {
    pub name: String,
    pub replicas: u32,
    pub selector: LabelMap,
    pub template: PodSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoscalerSpec {
    pub name: String,
    pub target_deployment: String,
    pub min_replicas: u32,
    pub max_replicas: u32,
    pub target_cpu_utilization_pct: u32,
}

impl AutoscalerSpec {
    pub fn clamp(&self, replicas: u32) -> u32 {
        replicas.clamp(self.min_replicas, self.max_replicas)
    }
}

/// The labels an agent advertises. `alivetime` is absent exactly when the
/// node has no walltime budget.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NodeLabels {
    pub nodetype: String,
    pub site: String,
    pub alivetime: Option<u64>,
}

impl NodeLabels {
    pub fn to_map(&self) -> LabelMap {
        let mut map = LabelMap::new();
        map.insert(LABEL_NODETYPE.to_string(), self.nodetype.clone());
        map.insert(LABEL_SITE.to_string(), self.site.clone());
        if let Some(alive) = self.alivetime {
            map.insert(LABEL_ALIVETIME.to_string(), alive.to_string());
        }
        map
    }
}

/// One typed section of a manifest document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Manifest {
    ConfigMap(ConfigMapSpec),
    Pod(PodSpec),
    Deployment(DeploymentSpec),
    HorizontalPodAutoscaler(AutoscalerSpec),
}

impl Manifest {
    pub fn name(&self) -> &str {
        match self {
            Manifest::ConfigMap(c) => &c.name,
            Manifest::Pod(p) => &p.name,
            Manifest::Deployment(d) => &d.name,
            Manifest::HorizontalPodAutoscaler(h) => &h.name,
        }
    }

    /// Lowercase kind as printed by the CLI (`pod/direct-stress`).
    pub fn kind_str(&self) -> &'static str {
        match self {
            Manifest::ConfigMap(_) => "configmap",
            Manifest::Pod(_) => "pod",
            Manifest::Deployment(_) => "deployment",
            Manifest::HorizontalPodAutoscaler(_) => "horizontalpodautoscaler",
        }
    }

    /// Every invariant violation of this spec; empty means deployable.
    pub fn validate(&self) -> Vec<Violation> {
        match self {
            Manifest::ConfigMap(c) => validate_config_map(c),
            Manifest::Pod(p) => validate_pod(p),
            Manifest::Deployment(d) => validate_deployment(d),
            Manifest::HorizontalPodAutoscaler(h) => validate_autoscaler(h),
        }
    }
}

/// A single invariant violation: where, and what.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn check_ident(out: &mut Vec<Violation>, field: &str, name: &str) {
    if let Some(problem) = identifier_problem(name) {
        out.push(Violation::new(field, format!("invalid name {name:?}: {problem}")));
    }
}

pub fn validate_config_map(spec: &ConfigMapSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    check_ident(&mut out, "metadata.name", &spec.name);
    for file in spec.data.keys() {
        if file.is_empty() || file.contains('/') || file.contains('\\') || file == "." || file == ".." {
            out.push(Violation::new("data", format!("invalid filename {file:?}")));
        }
    }
    out
}

/// Checks every pod invariant and reports all violations at once.
pub fn validate_pod(spec: &PodSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    check_ident(&mut out, "metadata.name", &spec.name);

    if spec.containers.is_empty() {
        out.push(Violation::new("spec.containers", "pod has no containers"));
    }

    let mut volume_names = BTreeSet::new();
    for (i, vol) in spec.volumes.iter().enumerate() {
        check_ident(&mut out, &format!("spec.volumes[{i}].name"), &vol.name);
        check_ident(&mut out, &format!("spec.volumes[{i}].configMap.name"), &vol.config_map);
        if !volume_names.insert(vol.name.as_str()) {
            out.push(Violation::new(
                format!("spec.volumes[{i}].name"),
                format!("duplicate volume name {:?}", vol.name),
            ));
        }
    }

    let mut container_names = BTreeSet::new();
    for (i, c) in spec.containers.iter().enumerate() {
        let field = format!("spec.containers[{i}]");
        check_ident(&mut out, &format!("{field}.name"), &c.name);
        if !container_names.insert(c.name.as_str()) {
            out.push(Violation::new(
                format!("{field}.name"),
                format!("duplicate container name {:?}", c.name),
            ));
        }
        if c.command.is_empty() || c.command[0].is_empty() {
            out.push(Violation::new(format!("{field}.command"), "command must not be empty"));
        }
        for (j, m) in c.volume_mounts.iter().enumerate() {
            if !volume_names.contains(m.volume_name.as_str()) {
                out.push(Violation::new(
                    format!("{field}.volumeMounts[{j}].name"),
                    format!("mounts undeclared volume {:?}", m.volume_name),
                ));
            }
            if normalize_mount_path(&m.mount_path).as_deref() != Some(m.mount_path.as_str()) {
                out.push(Violation::new(
                    format!("{field}.volumeMounts[{j}].mountPath"),
                    format!("mount path {:?} is not a normalized relative path", m.mount_path),
                ));
            }
        }
    }

    for (i, rule) in spec.affinity.iter().enumerate() {
        if let Some(problem) = crate::affinity::rule_problem(rule) {
            out.push(Violation::new(format!("spec.affinity[{i}]"), problem));
        }
    }
    out
}

pub fn validate_deployment(spec: &DeploymentSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    check_ident(&mut out, "metadata.name", &spec.name);
    if spec.selector.is_empty() {
        out.push(Violation::new("spec.selector.matchLabels", "selector must not be empty"));
    }
    for (k, v) in &spec.selector {
        if spec.template.labels.get(k) != Some(v) {
            out.push(Violation::new(
                "spec.template.metadata.labels",
                format!("template labels do not satisfy selector {k}={v}"),
            ));
        }
    }
    out.extend(validate_pod(&spec.template).into_iter().map(|v| Violation {
        field: format!("spec.template.{}", v.field),
        message: v.message,
    }));
    out
}

pub fn validate_autoscaler(spec: &AutoscalerSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    check_ident(&mut out, "metadata.name", &spec.name);
    check_ident(&mut out, "spec.scaleTargetRef.name", &spec.target_deployment);
    if spec.min_replicas == 0 {
        out.push(Violation::new("spec.minReplicas", "must be positive"));
    }
    if spec.max_replicas == 0 {
        out.push(Violation::new("spec.maxReplicas", "must be positive"));
    }
    if spec.min_replicas > spec.max_replicas {
        out.push(Violation::new(
            "spec.minReplicas",
            format!("minReplicas {} exceeds maxReplicas {}", spec.min_replicas, spec.max_replicas),
        ));
    }
    if spec.target_cpu_utilization_pct == 0 || spec.target_cpu_utilization_pct > 100 {
        out.push(Violation::new(
            "spec.metrics[0].resource.target.averageUtilization",
            format!("{} is outside (0, 100]", spec.target_cpu_utilization_pct),
        ));
    }
    out
}
