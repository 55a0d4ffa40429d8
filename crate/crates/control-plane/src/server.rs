//! Runtime of the control plane: a single writer task owning the state,
//! periodic reconcile and autoscaler ticks, agent synchronization, metric
//! scraping and the HTTP API.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use jiriaf_autoscaler::Decision;
use jiriaf_core::api::{
    ApplyOutcome, ApplyResult, CreatePodRequest, DeploymentView, ErrorBody, Heartbeat, NodeRegistration, NodeView,
    PodView,
};
use jiriaf_core::{parse_manifest, Manifest, PodStatus};
use jiriaf_metrics::{spawn_scraper, LabelFilter, MetricStore, ScrapeTarget, TargetRegistry, DEFAULT_RING_CAPACITY};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot, watch, Notify};
use tokio::task::JoinHandle;

use crate::autoscale::hpa_tick;
use crate::journal::{Journal, JournalEntry};
use crate::reconcile::{plan, PlanOptions};
use crate::state::{ClusterState, Mutation, StateError, TargetRequest};
use crate::{ControlPlaneConfig, ControlPlaneError};

const DECISION_HISTORY: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoscalerView {
    pub name: String,
    pub target_deployment: String,
    pub min_replicas: u32,
    pub max_replicas: u32,
    pub target_cpu_utilization_pct: u32,
    pub replicas: Option<u32>,
    pub last_scale_time: Option<DateTime<Utc>>,
    pub last_decision: Option<Decision>,
}

/// Response of `GET /state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDoc {
    pub revision: u64,
    pub nodes: Vec<NodeView>,
    pub pods: Vec<PodView>,
    pub deployments: Vec<DeploymentView>,
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

impl From<StateError> for ApiError {
    fn from(e: StateError) -> Self {
        let code = match e {
            StateError::DuplicateNode(_) | StateError::PodExists(_) => StatusCode::CONFLICT,
            StateError::UnknownNode(_)
            | StateError::UnknownPod(_)
            | StateError::UnknownDeployment(_)
            | StateError::UnknownAutoscaler(_)
            | StateError::UnknownConfigMap(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(code, e.to_string())
    }
}

fn stopped() -> ApiError {
    ApiError(StatusCode::SERVICE_UNAVAILABLE, "control plane is shutting down".into())
}

type Reply<T> = oneshot::Sender<T>;

enum Op {
    Apply(Vec<Manifest>, Reply<Vec<ApplyResult>>),
    Commit(Vec<Mutation>, Reply<Result<(), StateError>>),
    Reconcile(Reply<()>),
    Hpa(Reply<()>),
}

struct Writer {
    state: ClusterState,
    journal: Option<Journal>,
    snapshot: watch::Sender<Arc<ClusterState>>,
    decisions: Arc<Mutex<VecDeque<Decision>>>,
    store: Arc<MetricStore>,
    cfg: ControlPlaneConfig,
    plan_opts: PlanOptions,
    kick: Arc<Notify>,
}

impl Writer {
    fn commit(&mut self, m: Mutation) -> Result<(), StateError> {
        self.state.apply(&m)?;
        if let Some(j) = &mut self.journal {
            let entry = JournalEntry {
                rev: self.state.revision,
                mutation: m,
            };
            if let Err(e) = j.append(&entry) {
                tracing::error!(error = %e, "journal write failed");
            }
        }
        Ok(())
    }

    /// Applies a batch atomically: all mutations or none.
    fn commit_all(&mut self, muts: Vec<Mutation>) -> Result<(), StateError> {
        let mut probe = self.state.clone();
        for m in &muts {
            probe.apply(m)?;
        }
        for m in muts {
            self.commit(m)?;
        }
        Ok(())
    }

    fn publish(&self) {
        if self.snapshot.borrow().revision != self.state.revision {
            self.snapshot.send_replace(Arc::new(self.state.clone()));
        }
    }

    fn apply_manifest(&mut self, m: Manifest, now: DateTime<Utc>) -> ApplyOutcome {
        let violations = m.validate();
        if !violations.is_empty() {
            let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return ApplyOutcome::Invalid(msgs.join("; "));
        }
        let (existed, same, mutation) = match m {
            Manifest::ConfigMap(spec) => {
                let cur = self.state.configmaps.get(&spec.name);
                (cur.is_some(), cur == Some(&spec), Mutation::PutConfigMap { spec })
            }
            Manifest::Pod(spec) => match self.state.pods.get(&spec.name) {
                Some(rec) if rec.owner.is_none() && rec.spec == spec => return ApplyOutcome::Unchanged,
                Some(_) => {
                    return ApplyOutcome::Invalid(format!(
                        "pod {} already exists; delete it before changing its spec",
                        spec.name
                    ))
                }
                None => (false, false, Mutation::PutPod { spec, at: now }),
            },
            Manifest::Deployment(mut spec) => {
                let cur = self.state.deployments.get(&spec.name);
                let scaled = self
                    .state
                    .autoscalers
                    .values()
                    .any(|a| a.spec.target_deployment == spec.name);
                // An autoscaler owns the replica count once it targets the
                // deployment.
                if let (Some(cur), true) = (cur, scaled) {
                    spec.replicas = cur.replicas;
                }
                (cur.is_some(), cur == Some(&spec), Mutation::PutDeployment { spec })
            }
            Manifest::HorizontalPodAutoscaler(spec) => {
                let cur = self.state.autoscalers.get(&spec.name).map(|a| &a.spec);
                (cur.is_some(), cur == Some(&spec), Mutation::PutAutoscaler { spec })
            }
        };
        if same {
            return ApplyOutcome::Unchanged;
        }
        match self.commit(mutation) {
            Ok(()) if existed => ApplyOutcome::Configured,
            Ok(()) => ApplyOutcome::Created,
            Err(e) => ApplyOutcome::Invalid(e.to_string()),
        }
    }

    fn handle(&mut self, op: Op) {
        let now = Utc::now();
        match op {
            Op::Apply(manifests, reply) => {
                let results = manifests
                    .into_iter()
                    .map(|m| {
                        let kind = m.kind_str().to_string();
                        let name = m.name().to_string();
                        let outcome = self.apply_manifest(m, now);
                        ApplyResult { kind, name, outcome }
                    })
                    .collect();
                self.kick.notify_one();
                let _ = reply.send(results);
            }
            Op::Commit(muts, reply) => {
                let r = self.commit_all(muts);
                if r.is_ok() {
                    self.kick.notify_one();
                }
                let _ = reply.send(r);
            }
            Op::Reconcile(reply) => {
                for m in plan(&self.state, now, &self.plan_opts) {
                    if let Err(e) = self.commit(m) {
                        tracing::warn!(error = %e, "reconcile mutation rejected");
                    }
                }
                let _ = reply.send(());
            }
            Op::Hpa(reply) => {
                let (muts, decisions) = hpa_tick(
                    &self.state,
                    &self.store,
                    now,
                    &self.cfg.gate,
                    self.cfg.stabilization_window_s,
                );
                for m in muts {
                    if let Err(e) = self.commit(m) {
                        tracing::warn!(error = %e, "scale mutation rejected");
                    }
                }
                let mut log = self.decisions.lock();
                for d in decisions {
                    if log.len() == DECISION_HISTORY {
                        log.pop_front();
                    }
                    log.push_back(d);
                }
                drop(log);
                self.kick.notify_one();
                let _ = reply.send(());
            }
        }
        self.publish();
    }
}

#[derive(Clone)]
struct AppState {
    ops: mpsc::Sender<Op>,
    snapshot: watch::Receiver<Arc<ClusterState>>,
    store: Arc<MetricStore>,
    decisions: Arc<Mutex<VecDeque<Decision>>>,
    targets: Arc<Mutex<Vec<ScrapeTarget>>>,
    client: reqwest::Client,
}

impl AppState {
    async fn send<T>(&self, make: impl FnOnce(Reply<T>) -> Op) -> Result<T, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.ops.send(make(tx)).await.map_err(|_| stopped())?;
        rx.await.map_err(|_| stopped())
    }

    async fn commit(&self, muts: Vec<Mutation>) -> Result<(), ApiError> {
        self.send(|tx| Op::Commit(muts, tx)).await?.map_err(ApiError::from)
    }

    fn state(&self) -> Arc<ClusterState> {
        self.snapshot.borrow().clone()
    }
}

pub struct ControlPlaneHandle {
    addr: SocketAddr,
    app: AppState,
    stop: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
    writer: JoinHandle<()>,
}

impl ControlPlaneHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Latest published state.
    pub fn state(&self) -> Arc<ClusterState> {
        self.app.state()
    }

    pub fn store(&self) -> &Arc<MetricStore> {
        &self.app.store
    }

    pub fn decisions(&self) -> Vec<Decision> {
        self.app.decisions.lock().iter().cloned().collect()
    }

    /// Runs one reconcile pass now and waits for it.
    pub async fn reconcile_now(&self) {
        let _ = self.app.send(Op::Reconcile).await;
    }

    /// Stops all tasks and closes the journal.
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        for t in &self.tasks {
            t.abort();
        }
        for t in self.tasks {
            let _ = t.await;
        }
        drop(self.app);
        let _ = self.writer.await;
    }
}

/// Wraps tick loops so they end when `stop` flips.
fn spawn_ticker<F, Fut>(mut stop: watch::Receiver<bool>, f: F) -> JoinHandle<()>
where
    F: FnOnce() -> Fut + Send + 'static,
    Fut: std::future::Future<Output = ()> + Send + 'static,
{
    tokio::spawn(async move {
        tokio::select! {
            _ = f() => {}
            _ = stop.wait_for(|v| *v) => {}
        }
    })
}

pub async fn start_control_plane(cfg: ControlPlaneConfig) -> Result<ControlPlaneHandle, ControlPlaneError> {
    cfg.validate()?;
    let (journal, state) = match &cfg.data_dir {
        Some(dir) => {
            let (j, s) = Journal::open(&dir.join("journal.jsonl"))?;
            (Some(j), s)
        }
        None => (None, ClusterState::default()),
    };
    let store = Arc::new(match &cfg.data_dir {
        Some(dir) => MetricStore::open(&dir.join("metrics"), DEFAULT_RING_CAPACITY)?,
        None => MetricStore::in_memory(DEFAULT_RING_CAPACITY),
    });
    let listener = tokio::net::TcpListener::bind(&cfg.listen)
        .await
        .map_err(|source| ControlPlaneError::Bind {
            addr: cfg.listen.clone(),
            source,
        })?;
    let addr = listener.local_addr()?;
    tracing::info!(%addr, revision = state.revision, "control plane listening");

    let (snap_tx, snap_rx) = watch::channel(Arc::new(state.clone()));
    let decisions = Arc::new(Mutex::new(VecDeque::new()));
    let kick = Arc::new(Notify::new());
    let mut writer = Writer {
        state,
        journal,
        snapshot: snap_tx,
        decisions: decisions.clone(),
        store: store.clone(),
        cfg: cfg.clone(),
        plan_opts: PlanOptions {
            heartbeat_timeout_factor: cfg.heartbeat_timeout_factor,
            liveness_epoch: Some(Utc::now()),
        },
        kick: kick.clone(),
    };
    let (ops_tx, mut ops_rx) = mpsc::channel::<Op>(256);
    let writer_task = tokio::spawn(async move {
        while let Some(op) = ops_rx.recv().await {
            writer.handle(op);
        }
    });

    let client = reqwest::Client::builder()
        .timeout(cfg.agent_timeout)
        .build()
        .map_err(|e| ControlPlaneError::Config(e.to_string()))?;
    let app = AppState {
        ops: ops_tx,
        snapshot: snap_rx,
        store,
        decisions,
        targets: Arc::new(Mutex::new(Vec::new())),
        client,
    };
    let (stop, stop_rx) = watch::channel(false);
    let mut tasks = Vec::new();

    {
        let app = app.clone();
        let interval = cfg.reconcile_interval;
        tasks.push(spawn_ticker(stop_rx.clone(), move || async move {
            let inflight = Arc::new(Mutex::new(HashSet::new()));
            let mut tick = tokio::time::interval(interval);
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                tokio::select! {
                    _ = tick.tick() => {}
                    _ = kick.notified() => {}
                }
                if app.send(Op::Reconcile).await.is_err() {
                    break;
                }
                sync_agents(&app, &inflight);
            }
        }));
    }
    {
        let app = app.clone();
        let interval = cfg.hpa_interval;
        tasks.push(spawn_ticker(stop_rx.clone(), move || async move {
            let mut tick = tokio::time::interval(interval);
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            tick.tick().await;
            loop {
                tick.tick().await;
                if app.send(Op::Hpa).await.is_err() {
                    break;
                }
            }
        }));
    }
    {
        let app = app.clone();
        let interval_s = cfg.scrape_interval_s;
        tasks.push(spawn_ticker(stop_rx.clone(), move || scrape_manager(app, interval_s)));
    }
    {
        let router = router(app.clone());
        let mut stop_rx = stop_rx.clone();
        tasks.push(tokio::spawn(async move {
            let _ = axum::serve(listener, router)
                .with_graceful_shutdown(async move {
                    let _ = stop_rx.wait_for(|v| *v).await;
                })
                .await;
        }));
    }

    Ok(ControlPlaneHandle {
        addr,
        app,
        stop,
        tasks,
        writer: writer_task,
    })
}

/// Keeps one scraper per registered target, rebuilding port mappings in
/// registration order whenever the target list changes.
async fn scrape_manager(app: AppState, interval_s: u64) {
    let mut rx = app.snapshot.clone();
    let client = app.client.clone();
    let mut known: Vec<TargetRequest> = Vec::new();
    let mut running: BTreeMap<jiriaf_metrics::TargetOwner, (ScrapeTarget, JoinHandle<()>)> = BTreeMap::new();
    loop {
        let requests = rx.borrow_and_update().targets.clone();
        if requests != known {
            let mut registry = TargetRegistry::default();
            let mut wanted = BTreeMap::new();
            for r in &requests {
                match registry.register(r.owner.clone(), &r.ip, r.port, &r.route, &r.path, interval_s) {
                    Ok(t) => {
                        wanted.insert(t.owner.clone(), t);
                    }
                    Err(e) => tracing::warn!(owner = ?r.owner, error = %e, "cannot register scrape target"),
                }
            }
            running.retain(|owner, (target, handle)| {
                let keep = wanted.get(owner) == Some(target);
                if !keep {
                    handle.abort();
                }
                keep
            });
            for (owner, target) in wanted {
                running
                    .entry(owner)
                    .or_insert_with(|| (target.clone(), spawn_scraper(client.clone(), target, app.store.clone())));
            }
            *app.targets.lock() = registry.targets().cloned().collect();
            known = requests;
        }
        if rx.changed().await.is_err() {
            break;
        }
    }
    for (_, (_, h)) in running {
        h.abort();
    }
}

/// One round of agent I/O derived from the current snapshot: dispatch
/// bound pods, finish deletions, and collect pod statuses. Each call runs
/// in its own task; `inflight` keeps a pod from being handled twice.
fn sync_agents(app: &AppState, inflight: &Arc<Mutex<HashSet<String>>>) {
    let state = app.state();
    for pod in state.pods.values() {
        let Some(node) = pod.node.as_ref().and_then(|n| state.nodes.get(n)) else {
            continue;
        };
        if pod.lost || !node.is_ready() {
            continue;
        }
        let needs_dispatch = !pod.deleting && !pod.dispatched;
        let needs_delete = pod.deleting && pod.dispatched;
        if !needs_dispatch && !needs_delete {
            continue;
        }
        let key = pod.spec.name.clone();
        if !inflight.lock().insert(key.clone()) {
            continue;
        }
        let app = app.clone();
        let inflight = inflight.clone();
        let base = format!("http://{}", node.address);
        let rec = pod.clone();
        let configmaps = rec
            .spec
            .config_map_refs()
            .into_iter()
            .filter_map(|c| state.configmaps.get(c).map(|cm| (c.to_string(), cm.clone())))
            .collect();
        tokio::spawn(async move {
            let muts = if needs_delete {
                delete_on_agent(&app.client, &base, &rec.spec.name).await
            } else {
                let req = CreatePodRequest {
                    uid: rec.uid,
                    pod: rec.spec.clone(),
                    configmaps,
                };
                dispatch(&app.client, &base, req, rec.dispatch_error.as_deref()).await
            };
            if !muts.is_empty() {
                if let Err(e) = app.commit(muts).await {
                    tracing::debug!(pod = %rec.spec.name, error = %e.1, "agent result not applied");
                }
            }
            inflight.lock().remove(&key);
        });
    }

    for node in state.nodes.values().filter(|n| n.is_ready()) {
        let key = format!("node/{}", node.name);
        if !inflight.lock().insert(key.clone()) {
            continue;
        }
        let app = app.clone();
        let inflight = inflight.clone();
        let node_name = node.name.clone();
        let base = format!("http://{}", node.address);
        let state = state.clone();
        tokio::spawn(async move {
            poll_node(&app, &state, &node_name, &base).await;
            inflight.lock().remove(&key);
        });
    }
}

async fn dispatch(
    client: &reqwest::Client,
    base: &str,
    req: CreatePodRequest,
    previous_error: Option<&str>,
) -> Vec<Mutation> {
    let pod = req.pod.name.clone();
    let result = client.post(format!("{base}/pods")).json(&req).send().await;
    let error = match result {
        Ok(resp) if resp.status().is_success() => match resp.json::<PodStatus>().await {
            Ok(status) => {
                return vec![
                    Mutation::PodDispatched { pod: pod.clone(), error: None },
                    Mutation::PodReported { pod, status },
                ]
            }
            Err(e) => e.to_string(),
        },
        Ok(resp) => {
            let code = resp.status();
            let body = resp.json::<ErrorBody>().await.map(|b| b.error).unwrap_or_default();
            format!("agent answered {code}: {body}")
        }
        Err(e) => e.to_string(),
    };
    tracing::warn!(%pod, %error, "dispatch failed");
    if previous_error == Some(error.as_str()) {
        Vec::new()
    } else {
        vec![Mutation::PodDispatched { pod, error: Some(error) }]
    }
}

async fn delete_on_agent(client: &reqwest::Client, base: &str, pod: &str) -> Vec<Mutation> {
    match client.delete(format!("{base}/pods/{pod}")).send().await {
        Ok(r) if r.status().is_success() || r.status() == StatusCode::NOT_FOUND => {
            vec![Mutation::RemovePod { pod: pod.to_string() }]
        }
        Ok(r) => {
            tracing::warn!(%pod, status = %r.status(), "agent refused deletion");
            Vec::new()
        }
        Err(e) => {
            tracing::warn!(%pod, error = %e, "deletion failed");
            Vec::new()
        }
    }
}

/// Records changed statuses reported by one agent and removes pods the
/// agent runs but the cluster no longer knows.
async fn poll_node(app: &AppState, state: &ClusterState, node: &str, base: &str) {
    let statuses: Vec<PodStatus> = match app.client.get(format!("{base}/pods")).send().await {
        Ok(r) if r.status().is_success() => match r.json().await {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!(%node, error = %e, "bad status document");
                return;
            }
        },
        Ok(r) => {
            tracing::warn!(%node, status = %r.status(), "status poll refused");
            return;
        }
        Err(e) => {
            tracing::debug!(%node, error = %e, "status poll failed");
            return;
        }
    };
    for status in statuses {
        match state.pods.get(&status.name) {
            Some(rec) if rec.node.as_deref() == Some(node) && rec.uid == status.uid => {
                if rec.reported.as_ref() != Some(&status) && !rec.deleting {
                    let pod = status.name.clone();
                    if let Err(e) = app.commit(vec![Mutation::PodReported { pod, status }]).await {
                        tracing::debug!(error = %e.1, "status not applied");
                    }
                }
            }
            _ => {
                tracing::info!(%node, pod = %status.name, "removing pod unknown to the cluster");
                let _ = delete_on_agent(&app.client, base, &status.name).await;
            }
        }
    }
}

fn router(app: AppState) -> Router {
    Router::new()
        .route("/apply", post(apply))
        .route("/nodes", get(list_nodes).post(register_node))
        .route("/nodes/{name}/heartbeat", post(heartbeat))
        .route("/pods", get(list_pods))
        .route("/pods/{name}", delete(delete_pod))
        .route("/pods/{name}/logs", get(pod_logs))
        .route("/deployments", get(list_deployments))
        .route("/deployments/{name}", delete(delete_deployment))
        .route("/autoscalers", get(list_autoscalers))
        .route("/autoscalers/{name}", delete(delete_autoscaler))
        .route("/configmaps/{name}", delete(delete_configmap))
        .route("/state", get(long_poll_state))
        .route("/metrics/query", get(query_metrics))
        .route("/metrics/targets", get(list_targets).post(add_target))
        .with_state(app)
}

async fn apply(State(app): State<AppState>, body: String) -> Result<Json<Vec<ApplyResult>>, ApiError> {
    let manifests = parse_manifest(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    Ok(Json(app.send(|tx| Op::Apply(manifests, tx)).await?))
}

async fn list_nodes(State(app): State<AppState>) -> Json<Vec<NodeView>> {
    Json(app.state().node_views())
}

async fn register_node(
    State(app): State<AppState>,
    Json(registration): Json<NodeRegistration>,
) -> Result<StatusCode, ApiError> {
    if let Some(p) = jiriaf_core::ident::identifier_problem(&registration.nodename) {
        return Err(ApiError(StatusCode::BAD_REQUEST, format!("nodename: {p}")));
    }
    app.commit(vec![Mutation::RegisterNode {
        registration,
        at: Utc::now(),
    }])
    .await?;
    Ok(StatusCode::CREATED)
}

async fn heartbeat(
    State(app): State<AppState>,
    Path(node): Path<String>,
    Json(heartbeat): Json<Heartbeat>,
) -> Result<StatusCode, ApiError> {
    app.commit(vec![Mutation::Heartbeat {
        node,
        heartbeat,
        at: Utc::now(),
    }])
    .await?;
    Ok(StatusCode::OK)
}

async fn list_pods(State(app): State<AppState>) -> Json<Vec<PodView>> {
    Json(app.state().pod_views())
}

async fn delete_pod(State(app): State<AppState>, Path(pod): Path<String>) -> Result<StatusCode, ApiError> {
    if app.state().pods.get(&pod).is_some_and(|p| p.deleting) {
        return Ok(StatusCode::ACCEPTED);
    }
    app.commit(vec![Mutation::MarkDeleting { pod }]).await?;
    Ok(StatusCode::ACCEPTED)
}

#[derive(Debug, Deserialize)]
struct LogQuery {
    container: Option<String>,
    stream: Option<String>,
}

async fn pod_logs(
    State(app): State<AppState>,
    Path(pod): Path<String>,
    Query(q): Query<LogQuery>,
) -> Result<Response, ApiError> {
    let state = app.state();
    let rec = state
        .pods
        .get(&pod)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown pod {pod}")))?;
    let node = rec
        .node
        .as_ref()
        .and_then(|n| state.nodes.get(n))
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("pod {pod} is not on a node")))?;
    if !node.is_ready() {
        return Err(ApiError(StatusCode::BAD_GATEWAY, format!("node {} is gone", node.name)));
    }
    let mut url = format!("http://{}/pods/{pod}/logs?", node.address);
    if let Some(c) = &q.container {
        url.push_str(&format!("container={c}&"));
    }
    if let Some(s) = &q.stream {
        url.push_str(&format!("stream={s}"));
    }
    let resp = app
        .client
        .get(url.trim_end_matches(['?', '&']))
        .send()
        .await
        .map_err(|e| ApiError(StatusCode::BAD_GATEWAY, format!("node {}: {e}", node.name)))?;
    let code = StatusCode::from_u16(resp.status().as_u16()).unwrap_or(StatusCode::BAD_GATEWAY);
    if !code.is_success() {
        let msg = resp.json::<ErrorBody>().await.map(|b| b.error).unwrap_or_default();
        return Err(ApiError(code, msg));
    }
    let bytes = resp
        .bytes()
        .await
        .map_err(|e| ApiError(StatusCode::BAD_GATEWAY, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], Body::from(bytes)).into_response())
}

async fn list_deployments(State(app): State<AppState>) -> Json<Vec<DeploymentView>> {
    Json(app.state().deployment_views())
}

async fn delete_deployment(State(app): State<AppState>, Path(name): Path<String>) -> Result<StatusCode, ApiError> {
    app.commit(vec![Mutation::RemoveDeployment { name }]).await?;
    Ok(StatusCode::OK)
}

async fn delete_autoscaler(State(app): State<AppState>, Path(name): Path<String>) -> Result<StatusCode, ApiError> {
    app.commit(vec![Mutation::RemoveAutoscaler { name }]).await?;
    Ok(StatusCode::OK)
}

async fn delete_configmap(State(app): State<AppState>, Path(name): Path<String>) -> Result<StatusCode, ApiError> {
    app.commit(vec![Mutation::RemoveConfigMap { name }]).await?;
    Ok(StatusCode::OK)
}

async fn list_autoscalers(State(app): State<AppState>) -> Json<Vec<AutoscalerView>> {
    let state = app.state();
    let decisions = app.decisions.lock();
    Json(
        state
            .autoscalers
            .values()
            .map(|a| AutoscalerView {
                name: a.spec.name.clone(),
                target_deployment: a.spec.target_deployment.clone(),
                min_replicas: a.spec.min_replicas,
                max_replicas: a.spec.max_replicas,
                target_cpu_utilization_pct: a.spec.target_cpu_utilization_pct,
                replicas: state.deployments.get(&a.spec.target_deployment).map(|d| d.replicas),
                last_scale_time: a.last_scale_time,
                last_decision: decisions
                    .iter()
                    .rev()
                    .find(|d| d.deployment == a.spec.target_deployment)
                    .cloned(),
            })
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
struct StateQuery {
    #[serde(default)]
    rev: u64,
    timeout_s: Option<u64>,
}

/// Answers once the revision exceeds `rev`, or with the current state when
/// the timeout passes.
async fn long_poll_state(State(app): State<AppState>, Query(q): Query<StateQuery>) -> Json<StateDoc> {
    let mut rx = app.snapshot.clone();
    let timeout = Duration::from_secs(q.timeout_s.unwrap_or(30).min(300));
    let _ = tokio::time::timeout(timeout, async {
        let _ = rx.wait_for(|s| s.revision > q.rev).await;
    })
    .await;
    let state = app.state();
    Json(StateDoc {
        revision: state.revision,
        nodes: state.node_views(),
        pods: state.pod_views(),
        deployments: state.deployment_views(),
    })
}

#[derive(Debug, Deserialize)]
struct MetricQuery {
    metric: String,
    #[serde(default)]
    label: String,
    from: Option<String>,
    to: Option<String>,
}

fn parse_time(raw: &str) -> Result<DateTime<Utc>, ApiError> {
    if let Ok(secs) = raw.parse::<f64>() {
        let ms = (secs * 1000.0).round() as i64;
        return DateTime::from_timestamp_millis(ms)
            .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, format!("time {raw:?} out of range")));
    }
    DateTime::parse_from_rfc3339(raw)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| ApiError(StatusCode::BAD_REQUEST, format!("bad time {raw:?}")))
}

/// Latest samples per series, or per-series points in `[from, to]` when a
/// bound is given.
async fn query_metrics(State(app): State<AppState>, Query(q): Query<MetricQuery>) -> Result<Response, ApiError> {
    let filter = if q.label.is_empty() {
        LabelFilter::any()
    } else {
        LabelFilter::parse(&q.label)
            .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, format!("bad label filter {:?}", q.label)))?
    };
    if q.from.is_none() && q.to.is_none() {
        return Ok(Json(app.store.query_latest(&q.metric, &filter)).into_response());
    }
    let from = match &q.from {
        Some(f) => parse_time(f)?,
        None => DateTime::<Utc>::MIN_UTC,
    };
    let to = match &q.to {
        Some(t) => parse_time(t)?,
        None => Utc::now(),
    };
    Ok(Json(app.store.query_range(&q.metric, &filter, from, to)).into_response())
}

async fn list_targets(State(app): State<AppState>) -> Json<Vec<ScrapeTarget>> {
    Json(app.targets.lock().clone())
}

async fn add_target(State(app): State<AppState>, Json(target): Json<TargetRequest>) -> Result<StatusCode, ApiError> {
    if !app.state().nodes.contains_key(&target.owner.node) {
        return Err(ApiError(
            StatusCode::NOT_FOUND,
            format!("unknown node {}", target.owner.node),
        ));
    }
    app.commit(vec![Mutation::RegisterTarget { target }]).await?;
    Ok(StatusCode::ACCEPTED)
}
