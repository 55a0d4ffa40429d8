use std::collections::BTreeSet;

use chrono::{DateTime, TimeDelta, Utc};
use jiriaf_core::PodCondition;
use serde::{Deserialize, Serialize};

use crate::AutoscaleError;

/// Timing constants for deciding whether a pod's CPU sample is trustworthy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadinessGateConfig {
    /// How long after start a pod's CPU usage is considered warm-up.
    pub cpu_initialization_period_s: u64,
    pub delay_of_initial_readiness_s: u64,
    /// Width of the sampling window behind each metric timestamp.
    pub metric_window_s: u64,
}

impl Default for ReadinessGateConfig {
    fn default() -> Self {
        ReadinessGateConfig {
            cpu_initialization_period_s: 300,
            delay_of_initial_readiness_s: 30,
            metric_window_s: 30,
        }
    }
}

impl ReadinessGateConfig {
    pub fn validate(&self) -> Result<(), AutoscaleError> {
        for (name, v) in [
            ("cpu_initialization_period_s", self.cpu_initialization_period_s),
            ("delay_of_initial_readiness_s", self.delay_of_initial_readiness_s),
            ("metric_window_s", self.metric_window_s),
        ] {
            if v == 0 {
                return Err(AutoscaleError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

fn secs(s: u64) -> TimeDelta {
    TimeDelta::seconds(s.min(i64::MAX as u64 / 1000) as i64)
}

/// What the gate needs to know about one pod.
#[derive(Debug, Clone, PartialEq)]
pub struct GatePod {
    pub name: String,
    pub ready: Option<PodCondition>,
    pub start_time: Option<DateTime<Utc>>,
    /// Timestamp of the pod's latest CPU sample, if any.
    pub metric_timestamp: Option<DateTime<Utc>>,
}

/// Whether a single pod must be left out of the utilization average.
///
/// During the initialization period a pod counts only if it is ready and
/// its sample was taken at least one metric window after it became ready.
/// Afterwards it is left out only if it is unready and never became ready
/// within the initial-readiness delay after starting. A pod with no sample
/// during initialization is treated as having a stale one.
pub(crate) fn is_unready(pod: &GatePod, now: DateTime<Utc>, cfg: &ReadinessGateConfig) -> bool {
    let (Some(cond), Some(start)) = (pod.ready.as_ref(), pod.start_time) else {
        return true;
    };
    let ltt = cond.last_transition_time;
    if start + secs(cfg.cpu_initialization_period_s) > now {
        let stale = match pod.metric_timestamp {
            Some(ts) => ts < ltt + secs(cfg.metric_window_s),
            None => true,
        };
        !cond.status || stale
    } else {
        !cond.status && start + secs(cfg.delay_of_initial_readiness_s) > ltt
    }
}

/// Names of the pods whose CPU samples are excluded.
pub fn filter_unready(pods: &[GatePod], now: DateTime<Utc>, cfg: &ReadinessGateConfig) -> BTreeSet<String> {
    pods.iter()
        .filter(|p| is_unready(p, now, cfg))
        .map(|p| p.name.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap()
    }

    fn at(s: i64) -> DateTime<Utc> {
        t0() + TimeDelta::seconds(s)
    }

    fn pod(ready: Option<(bool, i64)>, start: Option<i64>, metric: Option<i64>) -> GatePod {
        GatePod {
            name: "p".into(),
            ready: ready.map(|(s, ltt)| PodCondition::new(s, at(ltt))),
            start_time: start.map(at),
            metric_timestamp: metric.map(at),
        }
    }

    fn excluded(p: &GatePod, now: i64) -> bool {
        !filter_unready(std::slice::from_ref(p), at(now), &ReadinessGateConfig::default()).is_empty()
    }

    #[test]
    fn missing_condition_or_start() {
        assert!(excluded(&pod(None, Some(0), Some(100)), 1000));
        assert!(excluded(&pod(Some((true, 0)), None, Some(100)), 1000));
    }

    #[test]
    fn young_unready_pod_excluded() {
        assert!(excluded(&pod(Some((false, 0)), Some(0), Some(50)), 60));
    }

    #[test]
    fn old_ready_pod_included() {
        assert!(!excluded(&pod(Some((true, 0)), Some(0), Some(590)), 600));
    }

    /// Every combination of condition presence, era, status, metric
    /// freshness and readiness delay against a table written out by hand.
    #[test]
    fn truth_table() {
        // (ready condition, start, metric, now) -> excluded
        // start = 0; init period 300 s; window 30 s; delay 30 s.
        type Case = (&'static str, Option<(bool, i64)>, Option<i64>, Option<i64>, i64, bool);
        let cases: &[Case] = &[
            ("no condition, young", None, Some(0), Some(50), 60, true),
            ("no condition, old", None, Some(0), Some(500), 600, true),
            ("no start", Some((true, 0)), None, Some(500), 600, true),
            ("young, ready, fresh", Some((true, 5)), Some(0), Some(40), 60, false),
            ("young, ready, sample at ltt+window", Some((true, 5)), Some(0), Some(35), 60, false),
            ("young, ready, stale", Some((true, 5)), Some(0), Some(20), 60, true),
            ("young, ready, no sample", Some((true, 5)), Some(0), None, 60, true),
            ("young, unready, fresh", Some((false, 5)), Some(0), Some(40), 60, true),
            ("young, unready, stale", Some((false, 5)), Some(0), Some(20), 60, true),
            ("old, ready, fresh", Some((true, 5)), Some(0), Some(590), 600, false),
            ("old, ready, stale", Some((true, 5)), Some(0), Some(10), 600, false),
            ("old, unready, flipped at start", Some((false, 0)), Some(0), Some(590), 600, true),
            ("old, unready, flipped inside delay", Some((false, 29)), Some(0), Some(590), 600, true),
            ("old, unready, flipped at delay", Some((false, 30)), Some(0), Some(590), 600, false),
            ("old, unready, flipped late", Some((false, 400)), Some(0), Some(590), 600, false),
            ("boundary: exactly at end of init period", Some((true, 5)), Some(0), Some(10), 300, false),
            ("boundary: just inside init period", Some((true, 5)), Some(0), Some(10), 299, true),
        ];
        for (label, cond, start, metric, now, want) in cases {
            let p = pod(*cond, *start, *metric);
            assert_eq!(excluded(&p, *now), *want, "{label}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(ReadinessGateConfig::default().validate().is_ok());
        let bad = ReadinessGateConfig {
            metric_window_s: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
