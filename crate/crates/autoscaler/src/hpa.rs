use std::fmt;

use chrono::{DateTime, TimeDelta, Utc};
use jiriaf_core::AutoscalerSpec;
use serde::{Deserialize, Serialize};

use crate::formula::desired_replicas;
use crate::gate::{is_unready, GatePod, ReadinessGateConfig};

/// A pod of the target deployment with its latest CPU utilization, in
/// percent of its request.
#[derive(Debug, Clone, PartialEq)]
pub struct PodSample {
    pub pod: GatePod,
    pub cpu_utilization_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecisionReason {
    ScaleUp,
    ScaleDown,
    /// Current replica count was outside `[min, max]`.
    Clamped,
    AtTarget,
    /// Downscale wanted but the last change was too recent.
    Stabilizing { remaining_s: i64 },
    NoUsableSamples,
}

impl fmt::Display for DecisionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecisionReason::ScaleUp => f.write_str("scale up"),
            DecisionReason::ScaleDown => f.write_str("scale down"),
            DecisionReason::Clamped => f.write_str("clamped to bounds"),
            DecisionReason::AtTarget => f.write_str("at target"),
            DecisionReason::Stabilizing { remaining_s } => {
                write!(f, "downscale held, {remaining_s}s left in stabilization window")
            }
            DecisionReason::NoUsableSamples => f.write_str("no usable samples"),
        }
    }
}

/// Outcome of one reconcile pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub time: DateTime<Utc>,
    pub deployment: String,
    pub current: u32,
    pub desired: u32,
    pub applied: bool,
    /// Mean utilization over the counted pods.
    pub metric: Option<f64>,
    pub counted_pods: usize,
    pub reason: DecisionReason,
}

impl Decision {
    /// New replica count, if this decision changes it.
    pub fn scale_to(&self) -> Option<u32> {
        self.applied.then_some(self.desired)
    }
}

/// Per-autoscaler reconciler state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpaState {
    pub spec: AutoscalerSpec,
    pub last_scale_time: Option<DateTime<Utc>>,
    pub stabilization_window_s: u64,
}

impl HpaState {
    pub fn new(spec: AutoscalerSpec) -> Self {
        HpaState {
            spec,
            last_scale_time: None,
            stabilization_window_s: 300,
        }
    }

    pub fn with_window(mut self, secs: u64) -> Self {
        self.stabilization_window_s = secs;
        self
    }

    fn window(&self) -> TimeDelta {
        TimeDelta::seconds(self.stabilization_window_s.min(i64::MAX as u64 / 1000) as i64)
    }

    /// Decides the replica count for the target deployment. Upscales apply
    /// at once; downscales wait until a full stabilization window has passed
    /// since the last applied change. A state that has never scaled may
    /// downscale immediately.
    pub fn reconcile(
        &mut self,
        current: u32,
        samples: &[PodSample],
        now: DateTime<Utc>,
        gate: &ReadinessGateConfig,
    ) -> Decision {
        let mut decision = Decision {
            time: now,
            deployment: self.spec.target_deployment.clone(),
            current,
            desired: current,
            applied: false,
            metric: None,
            counted_pods: 0,
            reason: DecisionReason::AtTarget,
        };

        let bounded = self.spec.clamp(current);
        if bounded != current {
            decision.desired = bounded;
            decision.applied = true;
            decision.reason = DecisionReason::Clamped;
            self.last_scale_time = Some(now);
            return decision;
        }

        let usable: Vec<f64> = samples
            .iter()
            .filter(|s| !is_unready(&s.pod, now, gate))
            .filter_map(|s| s.cpu_utilization_pct)
            .filter(|v| v.is_finite() && *v >= 0.0)
            .collect();
        if usable.is_empty() {
            decision.reason = DecisionReason::NoUsableSamples;
            return decision;
        }
        let mean = usable.iter().sum::<f64>() / usable.len() as f64;
        decision.metric = Some(mean);
        decision.counted_pods = usable.len();

        let target = self.spec.target_cpu_utilization_pct as f64;
        let raw = match desired_replicas(current.max(1), mean, target) {
            Ok(d) => d,
            Err(_) => {
                decision.reason = DecisionReason::NoUsableSamples;
                return decision;
            }
        };
        let desired = self.spec.clamp(raw);
        decision.desired = desired;

        if desired > current {
            decision.applied = true;
            decision.reason = DecisionReason::ScaleUp;
        } else if desired < current {
            match self.last_scale_time {
                Some(last) if now - last < self.window() => {
                    decision.desired = current;
                    decision.reason = DecisionReason::Stabilizing {
                        remaining_s: (last + self.window() - now).num_seconds(),
                    };
                }
                _ => {
                    decision.applied = true;
                    decision.reason = DecisionReason::ScaleDown;
                }
            }
        }
        if decision.applied {
            self.last_scale_time = Some(now);
        }
        decision
    }
}
