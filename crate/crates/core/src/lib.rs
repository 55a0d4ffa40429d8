//! Declarative workload model for the jiriaf mini-orchestrator.
//!
//! This crate holds everything that is pure data: the typed specs parsed
//! from manifest documents, the node label set advertised by agents, the
//! affinity matcher used by the scheduler, the container lifecycle UID tables
//! and the wire documents exchanged between agents, the control plane and
//! the CLI.

pub mod affinity;
pub mod api;
pub mod ident;
pub mod lifecycle;
pub mod manifest;
pub mod model;

pub use affinity::{match_affinity, match_affinity_labels, AffinityError};
pub use lifecycle::{ContainerStatus, CreateUid, GetUid, PodCondition, PodConditionSet, PodPhase, PodStatus};
pub use manifest::{parse_manifest, to_manifest, ManifestError};
pub use model::*;
