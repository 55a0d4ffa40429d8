//! Workflow specs and the env-list file format.

use jiriaf_core::ident::identifier_problem;
use serde::{Deserialize, Serialize};

use crate::LauncherError;

/// Time an agent is given less than its job, so it stops before the job's
/// allocation ends.
pub const WALLTIME_OFFSET_S: u64 = 60;

/// Env-list keys that belong to the batch system or tunnel setup and are
/// accepted but unused.
const IGNORED_KEYS: &[&str] = &[
    "account",
    "qos",
    "kubeconfig",
    "jrm_image",
    "custom_metrics_ports",
    "ssh_remote_proxy",
    "ssh_remote",
    "ssh_key",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowSpec {
    pub nnodes: u32,
    pub nodetype: String,
    pub site: String,
    /// Walltime of the whole job; 0 means unlimited.
    pub job_walltime_s: u64,
    pub nodename_prefix: String,
    /// `host:port` of the control plane.
    pub control_plane_address: String,
    /// Address agents advertise for their pods.
    #[serde(default = "default_pod_ip")]
    pub pod_ip: String,
}

fn default_pod_ip() -> String {
    "127.0.0.1".into()
}

/// Walltime handed to each agent for a job of `job_walltime_s`.
pub fn agent_walltime(job_walltime_s: u64) -> u64 {
    if job_walltime_s == 0 {
        0
    } else {
        job_walltime_s.saturating_sub(WALLTIME_OFFSET_S)
    }
}

/// Parses `HH:MM:SS`, `MM:SS` or plain seconds.
pub fn parse_walltime(raw: &str) -> Option<u64> {
    let parts: Vec<&str> = raw.trim().split(':').collect();
    if parts.len() > 3 || parts.iter().any(|p| p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit())) {
        return None;
    }
    parts.iter().try_fold(0u64, |acc, p| {
        let v: u64 = p.parse().ok()?;
        acc.checked_mul(60)?.checked_add(v)
    })
}

pub fn format_walltime(s: u64) -> String {
    format!("{:02}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
}

impl WorkflowSpec {
    /// Parses an env-list file: one `key=value` per line, optionally
    /// prefixed with `export`, with `#` comments and optional quotes.
    /// `default_control_plane` applies when the file names none.
    pub fn from_env_list(text: &str, default_control_plane: Option<&str>) -> Result<Self, LauncherError> {
        let mut nnodes = None;
        let mut nodetype = None;
        let mut site = None;
        let mut walltime = None;
        let mut nodename = None;
        let mut cp_addr = None;
        let mut cp_ip = None;
        let mut cp_port = None;
        let mut pod_ip = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let bad = |message: String| LauncherError::SpecParse { line: line_no, message };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let line = line.strip_prefix("export ").unwrap_or(line).trim();
            let Some((key, value)) = line.split_once('=') else {
                return Err(bad(format!("expected key=value, found {line:?}")));
            };
            let key = key.trim().to_ascii_lowercase();
            let value = unquote(value.trim()).to_string();
            match key.as_str() {
                "nnodes" => {
                    nnodes = Some(value.parse::<u32>().map_err(|_| bad(format!("nnodes {value:?} is not a count")))?)
                }
                "nodetype" => nodetype = Some(value),
                "site" => site = Some(value),
                "walltime" => {
                    walltime = Some(parse_walltime(&value).ok_or_else(|| bad(format!("walltime {value:?} is not HH:MM:SS or seconds")))?)
                }
                "nodename" => nodename = Some(value),
                "control_plane" => cp_addr = Some(value),
                "control_plane_ip" => cp_ip = Some(value),
                "apiserver_port" => cp_port = Some(value),
                "vkubelet_pod_ip" => pod_ip = Some(value),
                k if IGNORED_KEYS.contains(&k) => tracing::debug!(key = k, "ignoring env-list key"),
                k => return Err(bad(format!("unknown key {k:?}"))),
            }
        }
        let control_plane_address = cp_addr
            .or_else(|| match (cp_ip, cp_port) {
                (Some(ip), Some(port)) => Some(format!("{ip}:{port}")),
                _ => None,
            })
            .or_else(|| default_control_plane.map(String::from))
            .ok_or(LauncherError::MissingField("control_plane"))?;
        let spec = WorkflowSpec {
            nnodes: nnodes.ok_or(LauncherError::MissingField("nnodes"))?,
            nodetype: nodetype.unwrap_or_else(|| "cpu".into()),
            site: site.unwrap_or_else(|| "Local".into()),
            job_walltime_s: walltime.ok_or(LauncherError::MissingField("walltime"))?,
            nodename_prefix: nodename.ok_or(LauncherError::MissingField("nodename"))?,
            control_plane_address,
            pod_ip: pod_ip.unwrap_or_else(default_pod_ip),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), LauncherError> {
        let invalid = |m: String| Err(LauncherError::InvalidSpec(m));
        if self.nnodes == 0 {
            return invalid("nnodes must be at least 1".into());
        }
        if self.job_walltime_s != 0 && self.job_walltime_s <= WALLTIME_OFFSET_S {
            return invalid(format!(
                "walltime must be 0 or more than {WALLTIME_OFFSET_S} s, got {}",
                self.job_walltime_s
            ));
        }
        if let Some(p) = identifier_problem(&self.node_name(self.nnodes)) {
            return invalid(format!("nodename {:?}: {p}", self.nodename_prefix));
        }
        if self.control_plane_address.trim().is_empty() {
            return invalid("control plane address is empty".into());
        }
        Ok(())
    }

    pub fn agent_walltime_s(&self) -> u64 {
        agent_walltime(self.job_walltime_s)
    }

    /// `<prefix>-NN`, zero-padded to at least two digits.
    pub fn node_names(&self) -> Vec<String> {
        (1..=self.nnodes).map(|i| self.node_name(i)).collect()
    }

    pub fn node_name(&self, ordinal: u32) -> String {
        let width = self.nnodes.to_string().len().max(2);
        format!("{}-{:0width$}", self.nodename_prefix, ordinal)
    }
}

fn unquote(v: &str) -> &str {
    for q in ['"', '\''] {
        if let Some(inner) = v.strip_prefix(q).and_then(|s| s.strip_suffix(q)) {
            return inner;
        }
    }
    v
}
