//! Node lifecycle: bind, register, heartbeat, and shut down on walltime
//! expiry or request.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use jiriaf_core::api::{Heartbeat, NodeRegistration, NodeStatus, TerminationReport};
use jiriaf_core::NodeLabels;
use reqwest::StatusCode;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::config::AgentConfig;
use crate::process::ProcessApi;
use crate::server::{router, AppState};
use crate::supervisor::{Supervisor, SupervisorHandle};
use crate::AgentError;

/// Shared view of the node's identity and readiness.
#[derive(Debug)]
pub struct NodeState {
    pub cfg: AgentConfig,
    pub started: Instant,
    ready: AtomicBool,
}

impl NodeState {
    pub fn new(cfg: AgentConfig) -> Self {
        NodeState {
            cfg,
            started: Instant::now(),
            ready: AtomicBool::new(true),
        }
    }

    pub fn is_ready(&self) -> bool {
        self.ready.load(Ordering::SeqCst)
    }

    pub fn status(&self) -> NodeStatus {
        if self.is_ready() {
            NodeStatus::Ready
        } else {
            NodeStatus::NotReady
        }
    }

    pub fn labels(&self) -> NodeLabels {
        self.cfg.labels_at(self.started.elapsed())
    }

    pub fn heartbeat(&self) -> Heartbeat {
        Heartbeat {
            status: self.status(),
            labels: self.labels(),
        }
    }

    fn set_not_ready(&self) {
        self.ready.store(false, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExitReason {
    Walltime,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentExit {
    pub reason: ExitReason,
    /// Seconds from start until the node reported NotReady.
    pub not_ready_after_s: f64,
    pub terminated: Vec<TerminationReport>,
}

pub struct AgentHandle {
    addr: SocketAddr,
    node: Arc<NodeState>,
    supervisor: SupervisorHandle,
    stop: watch::Sender<bool>,
    task: JoinHandle<AgentExit>,
}

impl AgentHandle {
    /// Address the agent API listens on.
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn node(&self) -> &Arc<NodeState> {
        &self.node
    }

    pub fn supervisor(&self) -> &SupervisorHandle {
        &self.supervisor
    }

    /// Asks the agent to stop: pods get the configured grace period.
    pub fn request_shutdown(&self) {
        let _ = self.stop.send(true);
    }

    pub fn is_finished(&self) -> bool {
        self.task.is_finished()
    }

    /// Waits for the agent loop to exit.
    pub async fn wait(self) -> AgentExit {
        let _keep = self.stop;
        self.task.await.unwrap_or(AgentExit {
            reason: ExitReason::Shutdown,
            not_ready_after_s: 0.0,
            terminated: Vec::new(),
        })
    }

    pub async fn shutdown(self) -> AgentExit {
        self.request_shutdown();
        self.wait().await
    }
}

fn registration(node: &NodeState, addr: SocketAddr) -> NodeRegistration {
    let cfg = &node.cfg;
    NodeRegistration {
        nodename: cfg.nodename.clone(),
        address: addr.to_string(),
        pod_ip: cfg.pod_ip.clone(),
        kubelet_port: addr.port(),
        labels: node.labels(),
        extra_labels: cfg.extra_labels.clone(),
        heartbeat_interval_s: cfg.heartbeat_interval.as_secs_f64().ceil().max(1.0) as u64,
    }
}

async fn register(client: &reqwest::Client, cp: &str, reg: &NodeRegistration) -> Result<(), AgentError> {
    let resp = client
        .post(format!("http://{cp}/nodes"))
        .json(reg)
        .send()
        .await
        .map_err(|e| AgentError::ControlPlane(e.to_string()))?;
    match resp.status() {
        s if s.is_success() => Ok(()),
        StatusCode::CONFLICT => Err(AgentError::DuplicateNode(reg.nodename.clone())),
        s => {
            let body = resp.text().await.unwrap_or_default();
            Err(AgentError::ControlPlane(format!("registration answered {s}: {body}")))
        }
    }
}

/// Sends one heartbeat, re-registering if the control plane lost the node.
async fn heartbeat(client: &reqwest::Client, cp: &str, node: &NodeState, addr: SocketAddr) {
    let url = format!("http://{cp}/nodes/{}/heartbeat", node.cfg.nodename);
    match client.post(&url).json(&node.heartbeat()).send().await {
        Ok(r) if r.status() == StatusCode::NOT_FOUND => {
            if let Err(e) = register(client, cp, &registration(node, addr)).await {
                tracing::warn!(error = %e, "re-registration failed");
            }
        }
        Ok(r) if !r.status().is_success() => tracing::warn!(status = %r.status(), "heartbeat rejected"),
        Ok(_) => {}
        Err(e) => tracing::warn!(error = %e, "heartbeat failed"),
    }
}

/// Starts an agent: binds the kubelet port, registers with the control
/// plane if one is configured, and runs until walltime expiry or shutdown.
pub async fn start_node(cfg: AgentConfig, api: Arc<dyn ProcessApi>) -> Result<AgentHandle, AgentError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.work_root)?;
    let bind = format!("{}:{}", cfg.listen_host, cfg.kubelet_port);
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|source| AgentError::Bind { addr: bind.clone(), source })?;
    let addr = listener.local_addr()?;

    let (supervisor, snapshot, sup_thread) =
        Supervisor::spawn(api, cfg.work_root.clone(), cfg.grace_period, cfg.sample_interval)?;
    let node = Arc::new(NodeState::new(cfg));
    let client = reqwest::Client::builder()
        .timeout(Duration::from_secs(5))
        .build()
        .map_err(|e| AgentError::ControlPlane(e.to_string()))?;

    if let Some(cp) = &node.cfg.control_plane {
        if let Err(e) = register(&client, cp, &registration(&node, addr)).await {
            supervisor.stop();
            return Err(e);
        }
    }
    tracing::info!(node = %node.cfg.nodename, %addr, "node ready");

    let state = AppState {
        supervisor: supervisor.clone(),
        snapshot,
        node: node.clone(),
        work_root: node.cfg.work_root.clone(),
    };
    let (server_stop_tx, mut server_stop_rx) = watch::channel(false);
    let server = tokio::spawn(async move {
        let app = router(state);
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = server_stop_rx.wait_for(|v| *v).await;
            })
            .await;
    });

    let (stop, mut stop_rx) = watch::channel(false);
    let task = {
        let node = node.clone();
        let supervisor = supervisor.clone();
        tokio::spawn(async move {
            let walltime = node.cfg.walltime_s;
            let deadline = node.started + Duration::from_secs(walltime);
            let mut tick = tokio::time::interval(node.cfg.heartbeat_interval);
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            tick.tick().await;
            let reason = loop {
                tokio::select! {
                    _ = tokio::time::sleep_until(deadline.into()), if walltime > 0 => break ExitReason::Walltime,
                    _ = async { stop_rx.wait_for(|v| *v).await.map(|_| ()) } => break ExitReason::Shutdown,
                    _ = tick.tick() => {
                        if let Some(cp) = &node.cfg.control_plane {
                            heartbeat(&client, cp, &node, addr).await;
                        }
                    }
                }
            };
            node.set_not_ready();
            let not_ready_after_s = node.started.elapsed().as_secs_f64();
            match reason {
                ExitReason::Walltime => {
                    tracing::info!(walltime, "walltime has ended; terminating the processes")
                }
                ExitReason::Shutdown => tracing::info!("shutdown requested"),
            }
            if let Some(cp) = &node.cfg.control_plane {
                heartbeat(&client, cp, &node, addr).await;
            }
            let grace = match reason {
                ExitReason::Walltime => Duration::ZERO,
                ExitReason::Shutdown => node.cfg.grace_period,
            };
            let terminated = supervisor.terminate_all(grace).await.unwrap_or_default();
            supervisor.stop();
            let _ = tokio::task::spawn_blocking(move || sup_thread.join()).await;
            let _ = server_stop_tx.send(true);
            let _ = server.await;
            AgentExit {
                reason,
                not_ready_after_s,
                terminated,
            }
        })
    };

    Ok(AgentHandle {
        addr,
        node,
        supervisor,
        stop,
        task,
    })
}
