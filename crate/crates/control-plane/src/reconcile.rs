//! Level-triggered reconciliation. [`plan`] compares the cluster with its
//! desired state and returns the mutations that close the gap; applying
//! them and planning again yields nothing.

use std::collections::BTreeSet;

use chrono::{DateTime, TimeDelta, Utc};

use crate::scheduler::schedule;
use crate::state::{ClusterState, Mutation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanOptions {
    /// A node is NotReady once its last heartbeat is older than this many
    /// heartbeat intervals.
    pub heartbeat_timeout_factor: u32,
    /// Heartbeat ages are measured from no earlier than this instant, so a
    /// restarted control plane gives nodes a full timeout to check in.
    pub liveness_epoch: Option<DateTime<Utc>>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            heartbeat_timeout_factor: 3,
            liveness_epoch: None,
        }
    }
}

/// Lowest 1-based ordinals not taken by any pod name `<dep>-<n>`.
fn free_ordinals(state: &ClusterState, deployment: &str, count: usize) -> Vec<u32> {
    let taken: BTreeSet<String> = state.pods.keys().cloned().collect();
    (1u32..)
        .filter(|n| !taken.contains(&format!("{deployment}-{n}")))
        .take(count)
        .collect()
}

fn push(state: &mut ClusterState, out: &mut Vec<Mutation>, m: Mutation) {
    match state.apply(&m) {
        Ok(()) => out.push(m),
        Err(e) => tracing::warn!(error = %e, "planned mutation rejected"),
    }
}

pub fn plan(current: &ClusterState, now: DateTime<Utc>, opts: &PlanOptions) -> Vec<Mutation> {
    let mut state = current.clone();
    let mut out = Vec::new();

    // Heartbeat timeouts.
    let stale: Vec<String> = state
        .nodes
        .values()
        .filter(|n| n.is_ready())
        .filter(|n| {
            let seen = opts.liveness_epoch.map_or(n.last_heartbeat, |e| n.last_heartbeat.max(e));
            let limit = TimeDelta::seconds((n.heartbeat_interval_s * opts.heartbeat_timeout_factor as u64) as i64);
            now - seen > limit
        })
        .map(|n| n.name.clone())
        .collect();
    for node in stale {
        push(&mut state, &mut out, Mutation::NodeNotReady { node });
    }

    // Pods on nodes that went away.
    let lost: Vec<String> = state
        .pods
        .values()
        .filter(|p| !p.lost)
        .filter(|p| {
            p.node
                .as_ref()
                .is_some_and(|n| !state.nodes.get(n).is_some_and(|r| r.is_ready()))
        })
        .map(|p| p.spec.name.clone())
        .collect();
    for pod in lost {
        push(&mut state, &mut out, Mutation::PodLost { pod });
    }

    // Forget pods that need no agent-side cleanup: deleted pods that never
    // reached an agent or whose node is gone, and lost deployment pods.
    let forget: Vec<String> = state
        .pods
        .values()
        .filter(|p| (p.deleting && (!p.dispatched || p.lost)) || (p.lost && p.owner.is_some()))
        .map(|p| p.spec.name.clone())
        .collect();
    for pod in forget {
        push(&mut state, &mut out, Mutation::RemovePod { pod });
    }

    // Orphans of removed deployments.
    let orphans: Vec<String> = state
        .pods
        .values()
        .filter(|p| !p.deleting)
        .filter(|p| p.owner.as_ref().is_some_and(|o| !state.deployments.contains_key(o)))
        .map(|p| p.spec.name.clone())
        .collect();
    for pod in orphans {
        push(&mut state, &mut out, Mutation::MarkDeleting { pod });
    }

    // Deployment replica counts.
    let deployments: Vec<(String, u32)> = state
        .deployments
        .values()
        .map(|d| (d.name.clone(), d.replicas))
        .collect();
    for (dep, replicas) in deployments {
        let finished: Vec<String> = state
            .pods
            .values()
            .filter(|p| p.owner.as_deref() == Some(dep.as_str()) && !p.deleting && p.is_finished())
            .map(|p| p.spec.name.clone())
            .collect();
        for pod in finished {
            push(&mut state, &mut out, Mutation::MarkDeleting { pod });
        }
        let mut live: Vec<(u32, String)> = state
            .pods
            .values()
            .filter(|p| p.owner.as_deref() == Some(dep.as_str()) && p.is_live())
            .map(|p| (p.ordinal().unwrap_or(u32::MAX), p.spec.name.clone()))
            .collect();
        live.sort();
        let want = replicas as usize;
        if live.len() > want {
            for (_, pod) in live.drain(want..).rev() {
                push(&mut state, &mut out, Mutation::MarkDeleting { pod });
            }
        } else if live.len() < want {
            for n in free_ordinals(&state, &dep, want - live.len()) {
                push(
                    &mut state,
                    &mut out,
                    Mutation::CreateReplica {
                        deployment: dep.clone(),
                        name: format!("{dep}-{n}"),
                        at: now,
                    },
                );
            }
        }
    }

    // Scheduling, in name order.
    let pending: Vec<String> = state
        .pods
        .values()
        .filter(|p| p.node.is_none() && !p.lost && !p.deleting)
        .map(|p| p.spec.name.clone())
        .collect();
    for name in pending {
        let spec = state.pods[&name].spec.clone();
        let choice = schedule(&spec, state.nodes.values(), |n| state.pods_on(n).count());
        if let Some(node) = choice {
            push(&mut state, &mut out, Mutation::BindPod { pod: name, node, at: now });
        }
    }
    out
}
