use std::path::PathBuf;
use std::time::Duration;

use jiriaf_core::{ident, LabelMap, NodeLabels};

use crate::AgentError;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub nodename: String,
    /// `host:port` of the control plane. Without one the agent runs
    /// standalone and only serves its own API.
    pub control_plane: Option<String>,
    /// Advertised pod IP; several nodes may share one.
    pub pod_ip: String,
    /// 0 binds an ephemeral port.
    pub kubelet_port: u16,
    /// Runtime limit in seconds; 0 means unlimited.
    pub walltime_s: u64,
    pub nodetype: String,
    pub site: String,
    pub work_root: PathBuf,
    pub listen_host: String,
    pub heartbeat_interval: Duration,
    pub sample_interval: Duration,
    /// Time between the termination and kill signals.
    pub grace_period: Duration,
    pub extra_labels: LabelMap,
}

impl AgentConfig {
    pub fn new(nodename: impl Into<String>) -> Self {
        AgentConfig {
            nodename: nodename.into(),
            control_plane: None,
            pod_ip: "127.0.0.1".into(),
            kubelet_port: 10250,
            walltime_s: 0,
            nodetype: "cpu".into(),
            site: "Local".into(),
            work_root: std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
            listen_host: "127.0.0.1".into(),
            heartbeat_interval: Duration::from_secs(10),
            sample_interval: Duration::from_secs(1),
            grace_period: Duration::from_secs(5),
            extra_labels: LabelMap::new(),
        }
    }

    pub fn from_env() -> Result<Self, AgentError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Reads the configuration from environment-style variables.
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, AgentError> {
        let nodename = lookup("NODENAME").ok_or_else(|| AgentError::Config("NODENAME is not set".into()))?;
        let mut cfg = AgentConfig::new(nodename);
        if let Some(v) = lookup("JIRIAF_CONTROL_PLANE") {
            cfg.control_plane = Some(v);
        }
        if let Some(v) = lookup("VKUBELET_POD_IP") {
            cfg.pod_ip = v;
        }
        if let Some(v) = lookup("KUBELET_PORT") {
            cfg.kubelet_port = parse_num("KUBELET_PORT", &v)?;
        }
        if let Some(v) = lookup("JIRIAF_WALLTIME") {
            cfg.walltime_s = parse_num("JIRIAF_WALLTIME", &v)?;
        }
        if let Some(v) = lookup("JIRIAF_NODETYPE") {
            cfg.nodetype = v;
        }
        if let Some(v) = lookup("JIRIAF_SITE") {
            cfg.site = v;
        }
        if let Some(v) = lookup("JIRIAF_WORK_ROOT") {
            cfg.work_root = PathBuf::from(v);
        } else if let Some(v) = lookup("HOME") {
            cfg.work_root = PathBuf::from(v);
        }
        if let Some(v) = lookup("JIRIAF_HEARTBEAT_S") {
            cfg.heartbeat_interval = parse_secs("JIRIAF_HEARTBEAT_S", &v)?;
        }
        if let Some(v) = lookup("JIRIAF_SAMPLE_S") {
            cfg.sample_interval = parse_secs("JIRIAF_SAMPLE_S", &v)?;
        }
        if let Some(v) = lookup("JIRIAF_GRACE_S") {
            cfg.grace_period = parse_secs("JIRIAF_GRACE_S", &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if let Some(p) = ident::identifier_problem(&self.nodename) {
            return Err(AgentError::Config(format!("nodename: {p}")));
        }
        if self.kubelet_port != 0 && self.kubelet_port < 1024 {
            return Err(AgentError::Config(format!(
                "kubelet port {} is below 1024",
                self.kubelet_port
            )));
        }
        for (name, d) in [
            ("heartbeat interval", self.heartbeat_interval),
            ("sample interval", self.sample_interval),
        ] {
            if d.is_zero() {
                return Err(AgentError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Labels advertised after `elapsed` of runtime.
    pub fn labels_at(&self, elapsed: Duration) -> NodeLabels {
        NodeLabels {
            nodetype: self.nodetype.clone(),
            site: self.site.clone(),
            alivetime: (self.walltime_s > 0).then(|| self.walltime_s.saturating_sub(elapsed.as_secs())),
        }
    }
}

fn parse_num<T: std::str::FromStr>(var: &str, v: &str) -> Result<T, AgentError> {
    v.trim()
        .parse()
        .map_err(|_| AgentError::Config(format!("{var}={v:?} is not a nonnegative integer")))
}

fn parse_secs(var: &str, v: &str) -> Result<Duration, AgentError> {
    v.trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
        .ok_or_else(|| AgentError::Config(format!("{var}={v:?} is not a duration in seconds")))
}
