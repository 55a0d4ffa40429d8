//! Container lifecycle UIDs and pod status documents.
//!
//! The create-phase and monitoring-phase UID tables are part of the agent's
//! external contract: index values and string names are fixed.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Outcome of the create phase for a single container.
///
/// Every variant except [`CreateUid::ContainerStarted`] names the step that
/// failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum CreateUid {
    ReadDefaultVolDirError = 0,
    CopyFileError = 1,
    CmdStartError = 2,
    GetPgidError = 3,
    CreateStdoutFileError = 4,
    CreateStderrFileError = 5,
    CmdWaitError = 6,
    WritePgidError = 7,
    ContainerStarted = 8,
}

impl CreateUid {
    pub const ALL: [CreateUid; 9] = [
        CreateUid::ReadDefaultVolDirError,
        CreateUid::CopyFileError,
        CreateUid::CmdStartError,
        CreateUid::GetPgidError,
        CreateUid::CreateStdoutFileError,
        CreateUid::CreateStderrFileError,
        CreateUid::CmdWaitError,
        CreateUid::WritePgidError,
        CreateUid::ContainerStarted,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(index: u8) -> Option<Self> {
        Self::ALL.get(index as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CreateUid::ReadDefaultVolDirError => "create-cont-readDefaultVolDirError",
            CreateUid::CopyFileError => "create-cont-copyFileError",
            CreateUid::CmdStartError => "create-cont-cmdStartError",
            CreateUid::GetPgidError => "create-cont-getPgidError",
            CreateUid::CreateStdoutFileError => "create-cont-createStdoutFileError",
            CreateUid::CreateStderrFileError => "create-cont-createStderrFileError",
            CreateUid::CmdWaitError => "create-cont-cmdWaitError",
            CreateUid::WritePgidError => "create-cont-writePgidError",
            CreateUid::ContainerStarted => "create-cont-containerStarted",
        }
    }

    pub fn is_started(self) -> bool {
        self == CreateUid::ContainerStarted
    }
}

impl fmt::Display for CreateUid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Monitoring-phase classification of a container.
///
/// `Create` is reported for containers whose create phase did not reach
/// `containerStarted`; the remaining variants follow the precedence
/// `GetPidsError` > `GetStderrFileInfoError` > `StderrNotEmpty` >
/// `Completed`/`Running`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum GetUid {
    Create = 0,
    GetPidsError = 1,
    GetStderrFileInfoError = 2,
    StderrNotEmpty = 3,
    Completed = 4,
    Running = 5,
}

impl GetUid {
    pub const ALL: [GetUid; 6] = [
        GetUid::Create,
        GetUid::GetPidsError,
        GetUid::GetStderrFileInfoError,
        GetUid::StderrNotEmpty,
        GetUid::Completed,
        GetUid::Running,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(index: u8) -> Option<Self> {
        Self::ALL.get(index as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GetUid::Create => "get-cont-create",
            GetUid::GetPidsError => "get-cont-getPidsError",
            GetUid::GetStderrFileInfoError => "get-cont-getStderrFileInfoError",
            GetUid::StderrNotEmpty => "get-cont-stderrNotEmpty",
            GetUid::Completed => "get-cont-completed",
            GetUid::Running => "get-cont-running",
        }
    }

    /// Running or completed containers count towards pod readiness.
    pub fn is_healthy(self) -> bool {
        matches!(self, GetUid::Running | GetUid::Completed)
    }
}

impl fmt::Display for GetUid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PodCondition {
    pub status: bool,
    pub last_transition_time: DateTime<Utc>,
}

impl PodCondition {
    pub fn new(status: bool, at: DateTime<Utc>) -> Self {
        PodCondition {
            status,
            last_transition_time: at,
        }
    }
}

/// The three pod conditions. `None` means the condition was never reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PodConditionSet {
    pub scheduled: Option<PodCondition>,
    pub initialized: Option<PodCondition>,
    pub ready: Option<PodCondition>,
}

impl PodConditionSet {
    /// Conditions as computed on retrieval from an agent: scheduled and
    /// initialized at the pod start time, ready's transition time pinned to
    /// the first container's start time.
    pub fn on_retrieval(
        pod_start: DateTime<Utc>,
        first_container_start: Option<DateTime<Utc>>,
        ready: bool,
    ) -> Self {
        PodConditionSet {
            scheduled: Some(PodCondition::new(true, pod_start)),
            initialized: Some(PodCondition::new(true, pod_start)),
            ready: Some(PodCondition::new(ready, first_container_start.unwrap_or(pod_start))),
        }
    }

    pub fn is_ready(&self) -> bool {
        self.ready.is_some_and(|c| c.status)
    }

    pub fn is_scheduled(&self) -> bool {
        self.scheduled.is_some_and(|c| c.status)
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized.is_some_and(|c| c.status)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PodPhase {
    Pending,
    Running,
    Succeeded,
    Failed,
}

impl fmt::Display for PodPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PodPhase::Pending => "Pending",
            PodPhase::Running => "Running",
            PodPhase::Succeeded => "Succeeded",
            PodPhase::Failed => "Failed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerStatus {
    pub name: String,
    pub create_uid: CreateUid,
    /// Last monitoring classification; `None` before the first poll.
    pub get_uid: Option<GetUid>,
    pub pgid: Option<i32>,
    pub started_at: Option<DateTime<Utc>>,
    /// Error text for the failing step, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ContainerStatus {
    pub fn is_healthy(&self) -> bool {
        self.create_uid.is_started() && self.get_uid.is_some_and(GetUid::is_healthy)
    }

    pub fn is_failed(&self) -> bool {
        !self.create_uid.is_started()
            || matches!(
                self.get_uid,
                Some(GetUid::GetPidsError | GetUid::GetStderrFileInfoError | GetUid::StderrNotEmpty)
            )
    }

    /// The UID shown to operators: the monitoring UID when available.
    pub fn display_uid(&self) -> String {
        match (self.create_uid.is_started(), self.get_uid) {
            (true, Some(get)) => get.as_str().to_string(),
            _ => self.create_uid.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PodStatus {
    pub name: String,
    /// Control-plane identity of this pod instance.
    pub uid: u64,
    pub start_time: DateTime<Utc>,
    pub containers: Vec<ContainerStatus>,
    pub ready: bool,
    pub phase: PodPhase,
    pub conditions: PodConditionSet,
}

impl PodStatus {
    /// Readiness: every container is running or completed.
    pub fn compute_ready(containers: &[ContainerStatus]) -> bool {
        !containers.is_empty() && containers.iter().all(ContainerStatus::is_healthy)
    }

    pub fn compute_phase(containers: &[ContainerStatus]) -> PodPhase {
        if containers.iter().any(ContainerStatus::is_failed) {
            PodPhase::Failed
        } else if containers.iter().any(|c| c.get_uid == Some(GetUid::Running)) {
            PodPhase::Running
        } else if !containers.is_empty() && containers.iter().all(|c| c.get_uid == Some(GetUid::Completed)) {
            PodPhase::Succeeded
        } else {
            PodPhase::Pending
        }
    }

    /// Assembles a status from container states using the retrieval rules.
    pub fn assemble(name: String, uid: u64, start_time: DateTime<Utc>, containers: Vec<ContainerStatus>) -> Self {
        let ready = Self::compute_ready(&containers);
        let phase = Self::compute_phase(&containers);
        let first_start = containers.first().and_then(|c| c.started_at);
        PodStatus {
            name,
            uid,
            start_time,
            conditions: PodConditionSet::on_retrieval(start_time, first_start, ready),
            containers,
            ready,
            phase,
        }
    }

    /// The UID column shown by `get pods`: the first unhealthy container's
    /// UID, else the first container's.
    pub fn summary_uid(&self) -> String {
        self.containers
            .iter()
            .find(|c| !c.is_healthy())
            .or_else(|| self.containers.first())
            .map(ContainerStatus::display_uid)
            .unwrap_or_else(|| "-".to_string())
    }
}
