//! Workflow store: an append-only file of JSON events, replayed on open.
//! Mutations hold an exclusive advisory lock so concurrent launcher
//! invocations serialize.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::os::fd::AsRawFd;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::process::ProcessId;
use crate::spec::WorkflowSpec;
use crate::LauncherError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkflowState {
    Pending,
    Running,
    Completed,
    Deleted,
    Failed,
}

impl WorkflowState {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkflowState::Pending => "pending",
            WorkflowState::Running => "running",
            WorkflowState::Completed => "completed",
            WorkflowState::Deleted => "deleted",
            WorkflowState::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, WorkflowState::Completed | WorkflowState::Deleted | WorkflowState::Failed)
    }

    /// Allowed moves: pending to running or failed, running to a terminal
    /// state.
    pub fn can_become(self, next: WorkflowState) -> bool {
        use WorkflowState::*;
        matches!(
            (self, next),
            (Pending, Running) | (Pending, Failed) | (Running, Completed) | (Running, Deleted)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub nodename: String,
    pub process: Option<ProcessId>,
    pub kubelet_port: u16,
    pub walltime_s: u64,
    pub log: PathBuf,
    /// Why the agent did not start.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowRecord {
    pub id: String,
    pub spec: WorkflowSpec,
    pub state: WorkflowState,
    pub agents: Vec<AgentRecord>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl WorkflowRecord {
    pub fn processes(&self) -> Vec<ProcessId> {
        self.agents.iter().filter_map(|a| a.process).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Added {
        id: String,
        spec: WorkflowSpec,
        at: DateTime<Utc>,
    },
    Transition {
        id: String,
        state: WorkflowState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agents: Option<Vec<AgentRecord>>,
        at: DateTime<Utc>,
    },
}

/// Replayed contents of the store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Workflows {
    pub records: BTreeMap<String, WorkflowRecord>,
}

impl Workflows {
    pub fn apply(&mut self, event: &Event) -> Result<(), String> {
        match event {
            Event::Added { id, spec, at } => {
                if self.records.contains_key(id) {
                    return Err(format!("workflow {id} added twice"));
                }
                self.records.insert(
                    id.clone(),
                    WorkflowRecord {
                        id: id.clone(),
                        spec: spec.clone(),
                        state: WorkflowState::Pending,
                        agents: Vec::new(),
                        created_at: *at,
                        updated_at: *at,
                    },
                );
            }
            Event::Transition { id, state, agents, at } => {
                let rec = self.records.get_mut(id).ok_or_else(|| format!("unknown workflow {id}"))?;
                if !rec.state.can_become(*state) {
                    return Err(format!("workflow {id} cannot go from {} to {}", rec.state.as_str(), state.as_str()));
                }
                rec.state = *state;
                rec.updated_at = *at;
                if let Some(a) = agents {
                    rec.agents = a.clone();
                }
            }
        }
        Ok(())
    }

    /// `wf-NNNN` following the highest existing number.
    pub fn next_id(&self) -> String {
        let n = self
            .records
            .keys()
            .filter_map(|k| k.strip_prefix("wf-").and_then(|n| n.parse::<u64>().ok()))
            .max()
            .unwrap_or(0);
        format!("wf-{:04}", n + 1)
    }
}

/// The store file, locked for the lifetime of this value.
pub struct LockedStore {
    file: File,
    path: PathBuf,
    pub workflows: Workflows,
}

impl LockedStore {
    /// Opens, locks and replays the store. A torn final line left by an
    /// interrupted write is discarded.
    pub fn open(path: &Path) -> Result<Self, LauncherError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        // SAFETY: the descriptor is valid for the life of `file`.
        if unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX) } != 0 {
            return Err(std::io::Error::last_os_error().into());
        }
        let mut workflows = Workflows::default();
        let mut good_len = 0u64;
        {
            file.seek(SeekFrom::Start(0))?;
            let mut lines = BufReader::new(&file).split(b'\n').enumerate().peekable();
            while let Some((i, line)) = lines.next() {
                let line = line?;
                let last = lines.peek().is_none();
                let corrupt = |message: String| LauncherError::CorruptStore {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message,
                };
                let event: Event = match serde_json::from_slice(&line) {
                    Ok(e) => e,
                    Err(_) if last => break,
                    Err(e) => return Err(corrupt(e.to_string())),
                };
                workflows.apply(&event).map_err(corrupt)?;
                good_len += line.len() as u64 + 1;
            }
        }
        let len = file.metadata()?.len();
        if len > good_len {
            file.set_len(good_len)?;
        } else if len < good_len {
            file.write_all(b"\n")?;
        }
        Ok(LockedStore {
            file,
            path: path.to_path_buf(),
            workflows,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&mut self, event: Event) -> Result<(), LauncherError> {
        self.workflows.apply(&event).map_err(|message| LauncherError::CorruptStore {
            path: self.path.clone(),
            line: 0,
            message,
        })?;
        let mut line = serde_json::to_vec(&event).expect("events always serialize");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}
