//! Workflow launcher. A workflow asks for N agents with a walltime budget;
//! the launcher records it, starts the agents as local processes and
//! tracks them until they finish or the workflow is deleted.

pub mod process;
pub mod spec;
pub mod store;

use std::net::{TcpStream, ToSocketAddrs};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::Utc;

pub use process::{free_port, is_alive, spawn_agent, terminate_all, AgentCommand, AgentPlan, ProcessId};
pub use spec::{agent_walltime, format_walltime, parse_walltime, WorkflowSpec, WALLTIME_OFFSET_S};
pub use store::{AgentRecord, Event, LockedStore, WorkflowRecord, WorkflowState, Workflows};

pub const DEFAULT_KUBELET_PORTS: RangeInclusive<u16> = 10000..=19999;

#[derive(Debug, thiserror::Error)]
pub enum LauncherError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    SpecParse { line: usize, message: String },
    #[error("missing required field {0}")]
    MissingField(&'static str),
    #[error("invalid workflow: {0}")]
    InvalidSpec(String),
    #[error("{path}: line {line}: {message}")]
    CorruptStore { path: PathBuf, line: usize, message: String },
    #[error("control plane {addr} unreachable: {message}")]
    Unreachable { addr: String, message: String },
    #[error("node {0} already belongs to an active workflow")]
    NameInUse(String),
    #[error("unknown workflow {0}")]
    UnknownWorkflow(String),
    #[error("workflow {0} is already deleted")]
    AlreadyDeleted(String),
    #[error("no free kubelet port in {lo}-{hi}")]
    NoFreePort { lo: u16, hi: u16 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LauncherConfig {
    pub store_path: PathBuf,
    pub agent: AgentCommand,
    /// Agent logs go to `<log_dir>/<id>/<nodename>.log`.
    pub log_dir: PathBuf,
    /// Parent of per-agent work roots; agents default to `$HOME` when unset.
    pub work_root: Option<PathBuf>,
    pub stagger: Duration,
    /// How long deleted agents get to stop before SIGKILL.
    pub terminate_grace: Duration,
    pub kubelet_ports: RangeInclusive<u16>,
    pub connect_timeout: Duration,
}

impl LauncherConfig {
    pub fn new(store_path: impl Into<PathBuf>, agent: AgentCommand) -> Self {
        let store_path = store_path.into();
        let log_dir = store_path
            .parent()
            .map(|p| p.join("logs"))
            .unwrap_or_else(|| PathBuf::from("logs"));
        LauncherConfig {
            store_path,
            agent,
            log_dir,
            work_root: None,
            stagger: Duration::from_secs(3),
            terminate_grace: Duration::from_secs(15),
            kubelet_ports: DEFAULT_KUBELET_PORTS,
            connect_timeout: Duration::from_secs(2),
        }
    }
}

/// What `delete_wf` did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeleteOutcome {
    /// Agents were signalled; `killed` needed SIGKILL.
    Deleted { agents: usize, killed: usize },
    /// The workflow had already finished; nothing to stop.
    AlreadyFinished(WorkflowState),
}

pub struct Launcher {
    cfg: LauncherConfig,
}

impl Launcher {
    pub fn new(cfg: LauncherConfig) -> Self {
        Launcher { cfg }
    }

    pub fn config(&self) -> &LauncherConfig {
        &self.cfg
    }

    fn check_reachable(&self, addr: &str) -> Result<(), LauncherError> {
        let unreachable = |message: String| LauncherError::Unreachable {
            addr: addr.to_string(),
            message,
        };
        let addrs: Vec<_> = addr.to_socket_addrs().map_err(|e| unreachable(e.to_string()))?.collect();
        let mut last = "no addresses".to_string();
        for a in addrs {
            match TcpStream::connect_timeout(&a, self.cfg.connect_timeout) {
                Ok(_) => return Ok(()),
                Err(e) => last = e.to_string(),
            }
        }
        Err(unreachable(last))
    }

    /// Marks running workflows whose agents have all exited as completed.
    fn refresh(store: &mut LockedStore) -> Result<(), LauncherError> {
        let finished: Vec<String> = store
            .workflows
            .records
            .values()
            .filter(|r| r.state == WorkflowState::Running && !r.processes().into_iter().any(is_alive))
            .map(|r| r.id.clone())
            .collect();
        for id in finished {
            store.record(Event::Transition {
                id,
                state: WorkflowState::Completed,
                agents: None,
                at: Utc::now(),
            })?;
        }
        Ok(())
    }

    /// Records the workflow and starts its agents, one every `stagger`.
    /// If any agent fails to start, the ones already running are stopped
    /// and the workflow is marked failed with each agent's error.
    pub fn add_wf(&self, spec: WorkflowSpec) -> Result<WorkflowRecord, LauncherError> {
        spec.validate()?;
        self.check_reachable(&spec.control_plane_address)?;
        let mut store = LockedStore::open(&self.cfg.store_path)?;
        Self::refresh(&mut store)?;
        let names = spec.node_names();
        let mut taken_ports = Vec::new();
        for rec in store.workflows.records.values().filter(|r| !r.state.is_terminal()) {
            for a in &rec.agents {
                taken_ports.push(a.kubelet_port);
            }
            if let Some(clash) = rec.spec.node_names().into_iter().find(|n| names.contains(n)) {
                return Err(LauncherError::NameInUse(clash));
            }
        }
        let id = store.workflows.next_id();
        store.record(Event::Added {
            id: id.clone(),
            spec: spec.clone(),
            at: Utc::now(),
        })?;

        let mut agents = Vec::with_capacity(names.len());
        let mut failed = false;
        for (i, nodename) in names.iter().enumerate() {
            if i > 0 && !self.cfg.stagger.is_zero() {
                std::thread::sleep(self.cfg.stagger);
            }
            let log = self.cfg.log_dir.join(&id).join(format!("{nodename}.log"));
            let mut rec = AgentRecord {
                nodename: nodename.clone(),
                process: None,
                kubelet_port: 0,
                walltime_s: spec.agent_walltime_s(),
                log: log.clone(),
                error: None,
            };
            let Some(port) = free_port(self.cfg.kubelet_ports.clone(), &taken_ports) else {
                rec.error = Some(
                    LauncherError::NoFreePort {
                        lo: *self.cfg.kubelet_ports.start(),
                        hi: *self.cfg.kubelet_ports.end(),
                    }
                    .to_string(),
                );
                agents.push(rec);
                failed = true;
                break;
            };
            taken_ports.push(port);
            rec.kubelet_port = port;
            let plan = AgentPlan {
                nodename: nodename.clone(),
                control_plane: spec.control_plane_address.clone(),
                kubelet_port: port,
                walltime_s: spec.agent_walltime_s(),
                nodetype: spec.nodetype.clone(),
                site: spec.site.clone(),
                pod_ip: spec.pod_ip.clone(),
                work_root: self.cfg.work_root.as_ref().map(|r| r.join(nodename)),
                log,
            };
            match spawn_agent(&self.cfg.agent, &plan) {
                Ok(pid) => {
                    tracing::info!(workflow = %id, node = %nodename, pid = pid.pid, port, "agent started");
                    rec.process = Some(pid);
                }
                Err(e) => {
                    tracing::warn!(workflow = %id, node = %nodename, error = %e, "agent failed to start");
                    rec.error = Some(e.to_string());
                    failed = true;
                }
            }
            agents.push(rec);
            if failed {
                break;
            }
        }
        if failed {
            let started: Vec<ProcessId> = agents.iter().filter_map(|a| a.process).collect();
            terminate_all(&started, self.cfg.terminate_grace)?;
        }
        let state = if failed {
            WorkflowState::Failed
        } else {
            WorkflowState::Running
        };
        store.record(Event::Transition {
            id: id.clone(),
            state,
            agents: Some(agents),
            at: Utc::now(),
        })?;
        Ok(store.workflows.records[&id].clone())
    }

    /// All workflows, with running ones re-checked for live agents.
    pub fn get_wf(&self) -> Result<Vec<WorkflowRecord>, LauncherError> {
        let mut store = LockedStore::open(&self.cfg.store_path)?;
        Self::refresh(&mut store)?;
        Ok(store.workflows.records.values().cloned().collect())
    }

    /// Stops a running workflow's agents and marks it deleted. Finished
    /// workflows are acknowledged without touching processes.
    pub fn delete_wf(&self, id: &str) -> Result<DeleteOutcome, LauncherError> {
        let mut store = LockedStore::open(&self.cfg.store_path)?;
        Self::refresh(&mut store)?;
        let rec = store
            .workflows
            .records
            .get(id)
            .ok_or_else(|| LauncherError::UnknownWorkflow(id.to_string()))?
            .clone();
        match rec.state {
            WorkflowState::Deleted => Err(LauncherError::AlreadyDeleted(id.to_string())),
            WorkflowState::Completed | WorkflowState::Failed => Ok(DeleteOutcome::AlreadyFinished(rec.state)),
            WorkflowState::Pending | WorkflowState::Running => {
                let procs = rec.processes();
                let killed = terminate_all(&procs, self.cfg.terminate_grace)?;
                if rec.state == WorkflowState::Pending {
                    // Interrupted launch: nothing ran to completion.
                    store.record(Event::Transition {
                        id: id.to_string(),
                        state: WorkflowState::Failed,
                        agents: None,
                        at: Utc::now(),
                    })?;
                } else {
                    store.record(Event::Transition {
                        id: id.to_string(),
                        state: WorkflowState::Deleted,
                        agents: None,
                        at: Utc::now(),
                    })?;
                }
                Ok(DeleteOutcome::Deleted {
                    agents: procs.len(),
                    killed,
                })
            }
        }
    }
}

/// Renders `get-wf` output: one row per workflow, ordered by id.
pub fn render_workflows(records: &[WorkflowRecord]) -> String {
    let header = ["ID", "STATE", "NNODES", "NODETYPE", "SITE", "WALLTIME", "AGENT-WALLTIME", "NODES", "CREATED"];
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let names = r.spec.node_names();
            let nodes = match names.as_slice() {
                [] => String::new(),
                [one] => one.clone(),
                [first, .., last] => format!("{first}..{last}"),
            };
            vec![
                r.id.clone(),
                r.state.as_str().to_string(),
                r.spec.nnodes.to_string(),
                r.spec.nodetype.clone(),
                r.spec.site.clone(),
                walltime_cell(r.spec.job_walltime_s),
                walltime_cell(r.spec.agent_walltime_s()),
                nodes,
                r.created_at.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            ]
        })
        .collect();
    render_table(&header, &rows)
}

/// `HH:MM:SS`, or `-` for no limit.
fn walltime_cell(secs: u64) -> String {
    if secs == 0 {
        "-".into()
    } else {
        format_walltime(secs)
    }
}

/// Left-aligned columns separated by three spaces, trailing space trimmed.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i + 1 == cells.len() {
                s.push_str(cell);
            } else {
                s.push_str(&format!("{cell:<w$}   "));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

/// Default store location: `$JIRIAF_HOME/workflows.jsonl`, falling back to
/// `$HOME/.jiriaf/workflows.jsonl`.
pub fn default_store_path(lookup: impl Fn(&str) -> Option<String>) -> PathBuf {
    if let Some(home) = lookup("JIRIAF_HOME") {
        return Path::new(&home).join("workflows.jsonl");
    }
    let home = lookup("HOME").unwrap_or_else(|| ".".into());
    Path::new(&home).join(".jiriaf").join("workflows.jsonl")
}
