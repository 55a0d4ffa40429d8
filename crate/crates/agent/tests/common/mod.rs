#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use jiriaf_agent::{start_node, AgentConfig, AgentHandle, RealProcessApi};
use jiriaf_core::api::CreatePodRequest;
use jiriaf_core::{ConfigMapSpec, ContainerSpec, PodSpec, Volume, VolumeMount};

pub fn config(name: &str, root: &Path) -> AgentConfig {
    let mut cfg = AgentConfig::new(name);
    cfg.kubelet_port = 0;
    cfg.work_root = root.to_path_buf();
    cfg.heartbeat_interval = Duration::from_millis(200);
    cfg.sample_interval = Duration::from_millis(500);
    cfg.grace_period = Duration::from_secs(1);
    cfg
}

pub async fn start(cfg: AgentConfig) -> AgentHandle {
    start_node(cfg, Arc::new(RealProcessApi)).await.expect("agent starts")
}

/// A one-container pod running `script` from a configmap volume.
pub fn script_pod(name: &str, script: &str) -> CreatePodRequest {
    let pod = PodSpec {
        name: name.into(),
        containers: vec![ContainerSpec {
            name: "main".into(),
            image: "scripts".into(),
            command: vec!["bash".into(), "/work/run.sh".into()],
            args: vec![],
            env: BTreeMap::new(),
            volume_mounts: vec![VolumeMount {
                volume_name: "scripts".into(),
                mount_path: "work".into(),
            }],
        }],
        volumes: vec![Volume {
            name: "scripts".into(),
            config_map: "scripts".into(),
        }],
        ..Default::default()
    };
    let cm = ConfigMapSpec {
        name: "scripts".into(),
        data: [("run.sh".to_string(), script.to_string())].into(),
    };
    CreatePodRequest {
        uid: 1,
        pod,
        configmaps: [("scripts".to_string(), cm)].into(),
    }
}

/// Polls `f` until it returns `Some` or `timeout` passes.
pub async fn eventually<T>(timeout: Duration, mut f: impl AsyncFnMut() -> Option<T>) -> Option<T> {
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(v) = f().await {
            return Some(v);
        }
        if Instant::now() > deadline {
            return None;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
}

/// Live, non-zombie members of a process group according to /proc.
pub fn live_members(pgid: i32) -> usize {
    jiriaf_agent::procfs::group_members(pgid).map(|m| m.len()).unwrap_or(0)
}

pub fn cpu_value(exposition: &str, pod: &str) -> Option<f64> {
    let parsed = jiriaf_metrics::parse_exposition(exposition);
    parsed
        .lines
        .iter()
        .find(|l| l.name == "jiriaf_pod_cpu_usage" && l.labels.get("pod").map(String::as_str) == Some(pod))
        .map(|l| l.value)
}
