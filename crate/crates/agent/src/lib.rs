//! Node agent: joins the cluster as a node and runs each pod container as a
//! script in its own process group, reporting lifecycle UIDs, CPU usage and
//! remaining walltime.

pub mod config;
pub mod node;
pub mod process;
pub mod procfs;
pub mod runtime;
pub mod server;
pub mod supervisor;

pub use config::AgentConfig;
pub use node::{start_node, AgentExit, AgentHandle, ExitReason, NodeState};
pub use process::{Fault, FaultyProcessApi, ProcessApi, RealProcessApi};
pub use supervisor::{Snapshot, Supervisor, SupervisorHandle};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("node {0} is already registered")]
    DuplicateNode(String),
    #[error("control plane: {0}")]
    ControlPlane(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("agent stopped")]
    Stopped,
}
