//! Manifest documents.
//!
//! Manifests are YAML, shaped like the familiar Kubernetes objects, with one
//! object per document and `---` separating documents. Four kinds are
//! understood: `ConfigMap`, `Pod`, `Deployment` and `HorizontalPodAutoscaler`
//! (`HorizontalAutoscaler` is accepted as an alias).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_yaml::Value;
use thiserror::Error;

use crate::ident::normalize_mount_path;
use crate::model::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("document {doc}: unknown kind {kind:?}")]
    UnknownKind { doc: usize, kind: String },
    #[error("document {doc}: missing required field {field}")]
    MissingField { doc: usize, field: String },
    #[error("document {doc}: {message}")]
    Invalid { doc: usize, message: String },
}

impl ManifestError {
    /// `(line, column)` for syntax errors.
    pub fn position(&self) -> Option<(usize, usize)> {
        match self {
            ManifestError::Syntax { line, column, .. } => Some((*line, *column)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawMeta {
    name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    labels: LabelMap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawConfigMap {
    #[serde(default = "v1")]
    api_version: String,
    kind: String,
    metadata: RawMeta,
    #[serde(default)]
    data: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawPod {
    #[serde(default = "v1")]
    api_version: String,
    kind: String,
    metadata: RawMeta,
    spec: RawPodSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawPodSpec {
    containers: Vec<RawContainer>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    volumes: Vec<RawVolume>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    node_selector: LabelMap,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tolerations: Vec<RawToleration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    affinity: Option<RawAffinity>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawContainer {
    name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    image: String,
    command: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    args: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    env: Vec<RawEnv>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    volume_mounts: Vec<RawMount>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawEnv {
    name: String,
    #[serde(default)]
    value: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawMount {
    name: String,
    mount_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawVolume {
    name: String,
    config_map: RawNameRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawNameRef {
    name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawToleration {
    key: String,
    #[serde(default)]
    value: String,
    effect: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawAffinity {
    node_affinity: RawNodeAffinity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawNodeAffinity {
    #[serde(rename = "requiredDuringSchedulingIgnoredDuringExecution")]
    required: RawNodeSelector,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawNodeSelector {
    node_selector_terms: Vec<RawTerm>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawTerm {
    match_expressions: Vec<RawExpression>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawExpression {
    key: String,
    operator: String,
    #[serde(default)]
    values: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawDeployment {
    #[serde(default = "apps_v1")]
    api_version: String,
    kind: String,
    metadata: RawMeta,
    spec: RawDeploymentSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawDeploymentSpec {
    #[serde(default)]
    replicas: Option<u32>,
    selector: RawSelector,
    template: RawTemplate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawSelector {
    match_labels: LabelMap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawTemplate {
    #[serde(default)]
    metadata: RawTemplateMeta,
    spec: RawPodSpec,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct RawTemplateMeta {
    #[serde(default)]
    labels: LabelMap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawHpa {
    #[serde(default = "autoscaling_v2")]
    api_version: String,
    kind: String,
    metadata: RawMeta,
    spec: RawHpaSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawHpaSpec {
    scale_target_ref: RawTargetRef,
    #[serde(default)]
    min_replicas: Option<u32>,
    max_replicas: u32,
    metrics: Vec<RawMetric>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawTargetRef {
    #[serde(default = "apps_v1")]
    api_version: String,
    #[serde(default = "deployment_kind")]
    kind: String,
    name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawMetric {
    #[serde(rename = "type")]
    kind: String,
    resource: RawResourceMetric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawResourceMetric {
    name: String,
    target: RawMetricTarget,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawMetricTarget {
    #[serde(rename = "type")]
    kind: String,
    average_utilization: u32,
}

fn v1() -> String {
    "v1".to_string()
}
fn apps_v1() -> String {
    "apps/v1".to_string()
}
fn autoscaling_v2() -> String {
    "autoscaling/v2".to_string()
}
fn deployment_kind() -> String {
    "Deployment".to_string()
}

/// Parses a (possibly multi-document) manifest into typed specs, in
/// document order. Empty documents are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<Manifest>, ManifestError> {
    let mut out = Vec::new();
    for (i, document) in serde_yaml::Deserializer::from_str(text).enumerate() {
        let doc = i + 1;
        let value = Value::deserialize(document).map_err(syntax_error)?;
        if value.is_null() {
            continue;
        }
        out.push(parse_document(doc, value)?);
    }
    Ok(out)
}

fn syntax_error(err: serde_yaml::Error) -> ManifestError {
    let (line, column) = err.location().map(|l| (l.line(), l.column())).unwrap_or((0, 0));
    ManifestError::Syntax {
        line,
        column,
        message: err.to_string(),
    }
}

fn parse_document(doc: usize, value: Value) -> Result<Manifest, ManifestError> {
    if !value.is_mapping() {
        return Err(ManifestError::Invalid {
            doc,
            message: "document is not a mapping".to_string(),
        });
    }
    let kind = match value.get("kind") {
        Some(Value::String(k)) => k.clone(),
        Some(_) => {
            return Err(ManifestError::Invalid {
                doc,
                message: "kind must be a string".to_string(),
            })
        }
        None => {
            return Err(ManifestError::MissingField {
                doc,
                field: "kind".to_string(),
            })
        }
    };
    match kind.as_str() {
        "ConfigMap" => {
            let raw: RawConfigMap = typed(doc, value)?;
            Ok(Manifest::ConfigMap(ConfigMapSpec {
                name: raw.metadata.name,
                data: raw.data,
            }))
        }
        "Pod" => {
            let raw: RawPod = typed(doc, value)?;
            Ok(Manifest::Pod(pod_from_raw(doc, raw.metadata.name, raw.metadata.labels, raw.spec)?))
        }
        "Deployment" => {
            let raw: RawDeployment = typed(doc, value)?;
            let template = pod_from_raw(doc, raw.metadata.name.clone(), raw.spec.template.metadata.labels, raw.spec.template.spec)?;
            Ok(Manifest::Deployment(DeploymentSpec {
                name: raw.metadata.name,
                replicas: raw.spec.replicas.unwrap_or(1),
                selector: raw.spec.selector.match_labels,
                template,
            }))
        }
        "HorizontalPodAutoscaler" | "HorizontalAutoscaler" => {
            let raw: RawHpa = typed(doc, value)?;
            hpa_from_raw(doc, raw).map(Manifest::HorizontalPodAutoscaler)
        }
        other => Err(ManifestError::UnknownKind {
            doc,
            kind: other.to_string(),
        }),
    }
}

fn typed<T: serde::de::DeserializeOwned>(doc: usize, value: Value) -> Result<T, ManifestError> {
    serde_yaml::from_value(value).map_err(|e| {
        let message = e.to_string();
        match message.strip_prefix("missing field `") {
            Some(rest) => ManifestError::MissingField {
                doc,
                field: rest.split('`').next().unwrap_or(rest).to_string(),
            },
            None => ManifestError::Invalid { doc, message },
        }
    })
}

fn pod_from_raw(doc: usize, name: String, labels: LabelMap, raw: RawPodSpec) -> Result<PodSpec, ManifestError> {
    let invalid = |message: String| ManifestError::Invalid { doc, message };

    let containers = raw
        .containers
        .into_iter()
        .map(|c| ContainerSpec {
            name: c.name,
            image: c.image,
            command: c.command,
            args: c.args,
            env: c.env.into_iter().map(|e| (e.name, e.value)).collect(),
            volume_mounts: c
                .volume_mounts
                .into_iter()
                .map(|m| VolumeMount {
                    volume_name: m.name,
                    mount_path: normalize_mount_path(&m.mount_path).unwrap_or(m.mount_path),
                })
                .collect(),
        })
        .collect();

    let mut tolerations = Vec::new();
    for t in raw.tolerations {
        let effect = match t.effect.as_str() {
            "NoSchedule" => TaintEffect::NoSchedule,
            other => return Err(invalid(format!("unsupported toleration effect {other:?}"))),
        };
        tolerations.push(Toleration {
            key: t.key,
            value: t.value,
            effect,
        });
    }

    let mut affinity = Vec::new();
    if let Some(a) = raw.affinity {
        let terms = a.node_affinity.required.node_selector_terms;
        if terms.len() > 1 {
            return Err(invalid("only a single nodeSelectorTerm is supported".to_string()));
        }
        for expr in terms.into_iter().flat_map(|t| t.match_expressions) {
            let operator = match expr.operator.as_str() {
                "In" => AffinityOperator::In,
                "Gt" => AffinityOperator::Gt,
                other => return Err(invalid(format!("unsupported affinity operator {other:?}"))),
            };
            let rule = AffinityRule {
                key: expr.key,
                operator,
                values: expr.values,
            };
            if let Some(problem) = crate::affinity::rule_problem(&rule) {
                return Err(invalid(problem));
            }
            affinity.push(rule);
        }
    }

    Ok(PodSpec {
        name,
        labels,
        containers,
        volumes: raw
            .volumes
            .into_iter()
            .map(|v| Volume {
                name: v.name,
                config_map: v.config_map.name,
            })
            .collect(),
        node_selector: raw.node_selector,
        tolerations,
        affinity,
    })
}

fn hpa_from_raw(doc: usize, raw: RawHpa) -> Result<AutoscalerSpec, ManifestError> {
    let invalid = |message: String| ManifestError::Invalid { doc, message };
    if raw.spec.scale_target_ref.kind != "Deployment" {
        return Err(invalid(format!(
            "scaleTargetRef kind {:?} is not Deployment",
            raw.spec.scale_target_ref.kind
        )));
    }
    let cpu = match raw.spec.metrics.as_slice() {
        [m] if m.kind == "Resource" && m.resource.name == "cpu" && m.resource.target.kind == "Utilization" => {
            m.resource.target.average_utilization
        }
        _ => return Err(invalid("exactly one cpu Utilization resource metric is supported".to_string())),
    };
    Ok(AutoscalerSpec {
        name: raw.metadata.name,
        target_deployment: raw.spec.scale_target_ref.name,
        min_replicas: raw.spec.min_replicas.unwrap_or(1),
        max_replicas: raw.spec.max_replicas,
        target_cpu_utilization_pct: cpu,
    })
}

fn pod_to_raw(spec: &PodSpec) -> RawPodSpec {
    RawPodSpec {
        containers: spec
            .containers
            .iter()
            .map(|c| RawContainer {
                name: c.name.clone(),
                image: c.image.clone(),
                command: c.command.clone(),
                args: c.args.clone(),
                env: c
                    .env
                    .iter()
                    .map(|(k, v)| RawEnv {
                        name: k.clone(),
                        value: v.clone(),
                    })
                    .collect(),
                volume_mounts: c
                    .volume_mounts
                    .iter()
                    .map(|m| RawMount {
                        name: m.volume_name.clone(),
                        mount_path: format!("/{}", m.mount_path),
                    })
                    .collect(),
            })
            .collect(),
        volumes: spec
            .volumes
            .iter()
            .map(|v| RawVolume {
                name: v.name.clone(),
                config_map: RawNameRef {
                    name: v.config_map.clone(),
                },
            })
            .collect(),
        node_selector: spec.node_selector.clone(),
        tolerations: spec
            .tolerations
            .iter()
            .map(|t| RawToleration {
                key: t.key.clone(),
                value: t.value.clone(),
                effect: t.effect.to_string(),
            })
            .collect(),
        affinity: (!spec.affinity.is_empty()).then(|| RawAffinity {
            node_affinity: RawNodeAffinity {
                required: RawNodeSelector {
                    node_selector_terms: vec![RawTerm {
                        match_expressions: spec
                            .affinity
                            .iter()
                            .map(|r| RawExpression {
                                key: r.key.clone(),
                                operator: r.operator.to_string(),
                                values: r.values.clone(),
                            })
                            .collect(),
                    }],
                },
            },
        }),
    }
}

fn document_yaml(spec: &Manifest) -> Result<String, serde_yaml::Error> {
    match spec {
        Manifest::ConfigMap(c) => serde_yaml::to_string(&RawConfigMap {
            api_version: v1(),
            kind: "ConfigMap".to_string(),
            metadata: RawMeta {
                name: c.name.clone(),
                labels: LabelMap::new(),
            },
            data: c.data.clone(),
        }),
        Manifest::Pod(p) => serde_yaml::to_string(&RawPod {
            api_version: v1(),
            kind: "Pod".to_string(),
            metadata: RawMeta {
                name: p.name.clone(),
                labels: p.labels.clone(),
            },
            spec: pod_to_raw(p),
        }),
        Manifest::Deployment(d) => serde_yaml::to_string(&RawDeployment {
            api_version: apps_v1(),
            kind: "Deployment".to_string(),
            metadata: RawMeta {
                name: d.name.clone(),
                labels: LabelMap::new(),
            },
            spec: RawDeploymentSpec {
                replicas: Some(d.replicas),
                selector: RawSelector {
                    match_labels: d.selector.clone(),
                },
                template: RawTemplate {
                    metadata: RawTemplateMeta {
                        labels: d.template.labels.clone(),
                    },
                    spec: pod_to_raw(&d.template),
                },
            },
        }),
        Manifest::HorizontalPodAutoscaler(h) => serde_yaml::to_string(&RawHpa {
            api_version: autoscaling_v2(),
            kind: "HorizontalPodAutoscaler".to_string(),
            metadata: RawMeta {
                name: h.name.clone(),
                labels: LabelMap::new(),
            },
            spec: RawHpaSpec {
                scale_target_ref: RawTargetRef {
                    api_version: apps_v1(),
                    kind: deployment_kind(),
                    name: h.target_deployment.clone(),
                },
                min_replicas: Some(h.min_replicas),
                max_replicas: h.max_replicas,
                metrics: vec![RawMetric {
                    kind: "Resource".to_string(),
                    resource: RawResourceMetric {
                        name: "cpu".to_string(),
                        target: RawMetricTarget {
                            kind: "Utilization".to_string(),
                            average_utilization: h.target_cpu_utilization_pct,
                        },
                    },
                }],
            },
        }),
    }
}

/// Serializes specs back into a multi-document manifest.
pub fn to_manifest(specs: &[Manifest]) -> String {
    specs
        .iter()
        .map(|s| document_yaml(s).expect("manifest structs always serialize"))
        .collect::<Vec<_>>()
        .join("---\n")
}
