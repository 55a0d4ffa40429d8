//! The agent's HTTP API on its kubelet port.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get};
use axum::{Json, Router};
use jiriaf_core::api::{CreatePodRequest, ErrorBody, Heartbeat};
use jiriaf_metrics::{render_exposition, ExpositionLine};
use serde::Deserialize;
use tokio::sync::watch;

use crate::node::NodeState;
use crate::runtime::{container_dir, pod_dir};
use crate::supervisor::{Snapshot, SupervisorHandle};
use crate::AgentError;

pub use jiriaf_core::api::POD_CPU_METRIC as CPU_METRIC;
pub const ALIVETIME_METRIC: &str = "jiriaf_node_alivetime_seconds";
pub const READY_METRIC: &str = "jiriaf_node_ready";
pub const PODS_METRIC: &str = "jiriaf_node_pods";

#[derive(Clone)]
pub struct AppState {
    pub supervisor: SupervisorHandle,
    pub snapshot: watch::Receiver<Snapshot>,
    pub node: Arc<NodeState>,
    pub work_root: PathBuf,
}

impl IntoResponse for AgentError {
    fn into_response(self) -> Response {
        let code = match &self {
            AgentError::BadRequest(_) | AgentError::Config(_) => StatusCode::BAD_REQUEST,
            AgentError::NotFound(_) => StatusCode::NOT_FOUND,
            AgentError::Conflict(_) | AgentError::DuplicateNode(_) => StatusCode::CONFLICT,
            AgentError::Stopped => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (code, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/pods", get(list_pods).post(create_pod))
        .route("/pods/{name}", delete(delete_pod))
        .route("/pods/{name}/logs", get(pod_logs))
        .route("/metrics", get(metrics))
        .route("/node", get(node_info))
        .with_state(state)
}

async fn list_pods(State(s): State<AppState>) -> Result<Response, AgentError> {
    Ok(Json(s.supervisor.list().await?).into_response())
}

async fn create_pod(State(s): State<AppState>, Json(req): Json<CreatePodRequest>) -> Result<Response, AgentError> {
    if !s.node.is_ready() {
        return Err(AgentError::Conflict(format!("node {} is not ready", s.node.cfg.nodename)));
    }
    let status = s.supervisor.create(req).await?;
    Ok((StatusCode::CREATED, Json(status)).into_response())
}

async fn delete_pod(State(s): State<AppState>, Path(name): Path<String>) -> Result<Response, AgentError> {
    Ok(Json(s.supervisor.delete(&name).await?).into_response())
}

#[derive(Debug, Deserialize)]
struct LogQuery {
    container: Option<String>,
    #[serde(default)]
    stream: Option<String>,
}

/// Reads log files straight from disk, so output of deleted pods stays
/// available while the runtime directory exists.
async fn pod_logs(
    State(s): State<AppState>,
    Path(pod): Path<String>,
    Query(q): Query<LogQuery>,
) -> Result<Response, AgentError> {
    let stream = q.stream.as_deref().unwrap_or("stdout");
    if stream != "stdout" && stream != "stderr" {
        return Err(AgentError::BadRequest(format!("unknown stream {stream:?}")));
    }
    let container = match q.container {
        Some(c) => c,
        None => {
            let dir = pod_dir(&s.work_root, &pod).join("containers");
            let mut names: Vec<String> = std::fs::read_dir(&dir)
                .map_err(|_| AgentError::NotFound(format!("pod {pod}")))?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_dir())
                .filter_map(|e| e.file_name().into_string().ok())
                .collect();
            names.sort();
            match names.len() {
                1 => names.remove(0),
                0 => return Err(AgentError::NotFound(format!("pod {pod} has no containers"))),
                _ => {
                    return Err(AgentError::BadRequest(format!(
                        "pod {pod} has several containers ({}); choose one",
                        names.join(", ")
                    )))
                }
            }
        }
    };
    let path = container_dir(&s.work_root, &pod, &container).join(stream);
    let body = tokio::fs::read(&path)
        .await
        .map_err(|_| AgentError::NotFound(format!("{stream} of {pod}/{container}")))?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], body).into_response())
}

fn gauge(name: &str, labels: &[(&str, &str)], value: f64) -> ExpositionLine {
    ExpositionLine {
        name: name.to_string(),
        labels: labels
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect::<BTreeMap<_, _>>(),
        value,
    }
}

/// Renders the exposition document from the last published snapshot.
pub fn exposition(node: &NodeState, snap: &Snapshot) -> String {
    let name = node.cfg.nodename.as_str();
    let mut lines = vec![
        gauge(READY_METRIC, &[("node", name)], if node.is_ready() { 1.0 } else { 0.0 }),
        gauge(PODS_METRIC, &[("node", name)], snap.pods as f64),
    ];
    if let Some(alive) = node.labels().alivetime {
        lines.push(gauge(ALIVETIME_METRIC, &[("node", name)], alive as f64));
    }
    for (pod, pct) in &snap.cpu_pct {
        lines.push(gauge(CPU_METRIC, &[("node", name), ("pod", pod)], *pct));
    }
    render_exposition(&lines)
}

async fn metrics(State(s): State<AppState>) -> Response {
    let snap = s.snapshot.borrow().clone();
    (
        [(header::CONTENT_TYPE, "text/plain; version=0.0.4")],
        exposition(&s.node, &snap),
    )
        .into_response()
}

async fn node_info(State(s): State<AppState>) -> Json<Heartbeat> {
    Json(s.node.heartbeat())
}
