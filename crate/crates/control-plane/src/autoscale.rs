//! Feeds scraped pod CPU utilization into each autoscaler.

use chrono::{DateTime, Utc};
use jiriaf_autoscaler::{Decision, GatePod, HpaState, PodSample, ReadinessGateConfig};
use jiriaf_core::api::POD_CPU_METRIC;
use jiriaf_metrics::{LabelFilter, MetricStore};

use crate::state::{aggregate_conditions, ClusterState, Mutation};

/// Latest CPU sample for `pod` across every series carrying its name.
fn latest_cpu(store: &MetricStore, pod: &str) -> (Option<DateTime<Utc>>, Option<f64>) {
    store
        .query_latest(POD_CPU_METRIC, &LabelFilter::any().with("pod", pod))
        .into_iter()
        .max_by_key(|s| s.timestamp)
        .map(|s| (Some(s.timestamp), s.value))
        .unwrap_or((None, None))
}

/// Runs every autoscaler once. Returns the replica changes to apply and one
/// decision record per autoscaler whose deployment exists.
pub fn hpa_tick(
    state: &ClusterState,
    store: &MetricStore,
    now: DateTime<Utc>,
    gate: &ReadinessGateConfig,
    stabilization_window_s: u64,
) -> (Vec<Mutation>, Vec<Decision>) {
    let mut muts = Vec::new();
    let mut decisions = Vec::new();
    for (name, rec) in &state.autoscalers {
        let Some(dep) = state.deployments.get(&rec.spec.target_deployment) else {
            tracing::debug!(autoscaler = %name, "target deployment missing");
            continue;
        };
        let samples: Vec<PodSample> = state
            .pods
            .values()
            .filter(|p| p.owner.as_deref() == Some(dep.name.as_str()) && p.is_live())
            .map(|p| {
                let (metric_timestamp, cpu) = latest_cpu(store, &p.spec.name);
                PodSample {
                    pod: GatePod {
                        name: p.spec.name.clone(),
                        ready: aggregate_conditions(p).ready,
                        start_time: p.reported.as_ref().map(|s| s.start_time),
                        metric_timestamp,
                    },
                    cpu_utilization_pct: cpu,
                }
            })
            .collect();
        let mut hpa = HpaState {
            spec: rec.spec.clone(),
            last_scale_time: rec.last_scale_time,
            stabilization_window_s,
        };
        let decision = hpa.reconcile(dep.replicas, &samples, now, gate);
        tracing::info!(
            autoscaler = %name,
            deployment = %decision.deployment,
            current = decision.current,
            desired = decision.desired,
            applied = decision.applied,
            metric = ?decision.metric,
            reason = %decision.reason,
            "autoscaler decision"
        );
        if decision.applied {
            muts.push(Mutation::Scaled {
                autoscaler: name.clone(),
                replicas: decision.desired,
                at: now,
            });
        }
        decisions.push(decision);
    }
    (muts, decisions)
}
