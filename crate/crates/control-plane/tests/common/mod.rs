#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use jiriaf_agent::{start_node, AgentConfig, AgentHandle, RealProcessApi};
use jiriaf_control_plane::{start_control_plane, ControlPlaneConfig, ControlPlaneHandle};
use jiriaf_core::api::{ApplyResult, NodeView, PodView};

pub fn cp_config(data_dir: Option<&Path>) -> ControlPlaneConfig {
    ControlPlaneConfig {
        listen: "127.0.0.1:0".into(),
        data_dir: data_dir.map(Path::to_path_buf),
        reconcile_interval: Duration::from_millis(200),
        hpa_interval: Duration::from_secs(1),
        scrape_interval_s: 1,
        agent_timeout: Duration::from_secs(5),
        ..Default::default()
    }
}

pub async fn start_cp(cfg: ControlPlaneConfig) -> ControlPlaneHandle {
    start_control_plane(cfg).await.expect("control plane starts")
}

pub fn agent_config(name: &str, cp: &ControlPlaneHandle, root: &Path) -> AgentConfig {
    let mut cfg = AgentConfig::new(name);
    cfg.control_plane = Some(cp.addr().to_string());
    cfg.kubelet_port = 0;
    cfg.work_root = root.join(name);
    cfg.heartbeat_interval = Duration::from_millis(300);
    cfg.sample_interval = Duration::from_millis(500);
    cfg.grace_period = Duration::from_secs(1);
    cfg
}

pub async fn start_agent(cfg: AgentConfig) -> AgentHandle {
    std::fs::create_dir_all(&cfg.work_root).unwrap();
    start_node(cfg, Arc::new(RealProcessApi)).await.expect("agent starts")
}

pub struct Api {
    pub base: String,
    pub client: reqwest::Client,
}

impl Api {
    pub fn new(cp: &ControlPlaneHandle) -> Self {
        Api {
            base: format!("http://{}", cp.addr()),
            client: reqwest::Client::new(),
        }
    }

    pub async fn apply(&self, manifest: &str) -> Vec<ApplyResult> {
        let resp = self
            .client
            .post(format!("{}/apply", self.base))
            .body(manifest.to_string())
            .send()
            .await
            .unwrap();
        assert!(resp.status().is_success(), "apply answered {}", resp.status());
        resp.json().await.unwrap()
    }

    pub async fn pods(&self) -> Vec<PodView> {
        self.get_json("/pods").await
    }

    pub async fn nodes(&self) -> Vec<NodeView> {
        self.get_json("/nodes").await
    }

    pub async fn pod(&self, name: &str) -> Option<PodView> {
        self.pods().await.into_iter().find(|p| p.name == name)
    }

    pub async fn get_json<T: serde::de::DeserializeOwned>(&self, path: &str) -> T {
        self.client
            .get(format!("{}{path}", self.base))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap()
    }

    pub async fn delete(&self, path: &str) -> reqwest::StatusCode {
        self.client
            .delete(format!("{}{path}", self.base))
            .send()
            .await
            .unwrap()
            .status()
    }
}

pub async fn eventually<T>(timeout: Duration, mut f: impl AsyncFnMut() -> Option<T>) -> Option<T> {
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(v) = f().await {
            return Some(v);
        }
        if Instant::now() > deadline {
            return None;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
}

/// A configmap holding `script` plus a pod running it under bash.
pub fn script_pod_manifest(name: &str, script: &str, extra_spec: &str) -> String {
    let indented: String = script.lines().map(|l| format!("    {l}\n")).collect();
    format!(
        r#"kind: ConfigMap
metadata:
  name: {name}
data:
  run.sh: |
{indented}---
kind: Pod
metadata:
  name: {name}
spec:
  containers:
    - name: main
      command: ["bash", "/work/run.sh"]
      volumeMounts:
        - name: scripts
          mountPath: /work
  volumes:
    - name: scripts
      configMap:
        name: {name}
  nodeSelector:
    kubernetes.io/role: agent
  tolerations:
    - key: "virtual-kubelet.io/provider"
      value: "mock"
      effect: "NoSchedule"
{extra_spec}"#
    )
}
