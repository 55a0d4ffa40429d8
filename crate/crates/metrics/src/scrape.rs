use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

use crate::exposition::parse_exposition;
use crate::registry::ScrapeTarget;
use crate::series::{LabelFilter, MetricSample, SeriesKey};
use crate::store::MetricStore;

/// Synthetic per-target health series: 1 after a good scrape, 0 otherwise.
pub const UP_METRIC: &str = "up";

#[derive(Debug, Clone, PartialEq)]
pub struct ScrapeReport {
    pub up: bool,
    pub timestamp: DateTime<Utc>,
    /// Samples stored, not counting `up` or staleness markers.
    pub samples: usize,
    pub parse_errors: usize,
    /// Samples dropped because their series already had a newer point.
    pub rejected: usize,
    pub stale_marked: usize,
    pub error: Option<String>,
}

/// Labels every series from this target carries. An exporter-supplied label
/// of the same name is kept under `exported_<name>`.
fn owner_labels(target: &ScrapeTarget) -> Vec<(&'static str, String)> {
    let mut labels = vec![("node", target.owner.node.clone()), ("instance", target.instance())];
    if let Some(pod) = &target.owner.pod {
        labels.push(("pod", pod.clone()));
    }
    labels
}

fn stamp(target: &ScrapeTarget, metric: &str, mut labels: std::collections::BTreeMap<String, String>) -> SeriesKey {
    for (k, v) in owner_labels(target) {
        if let Some(prev) = labels.insert(k.to_string(), v.clone()) {
            if prev != v {
                labels.insert(format!("exported_{k}"), prev);
            }
        }
    }
    SeriesKey {
        metric: metric.to_string(),
        labels,
    }
}

fn target_filter(target: &ScrapeTarget) -> LabelFilter {
    owner_labels(target)
        .into_iter()
        .fold(LabelFilter::any(), |f, (k, v)| f.with(k, v))
}

async fn fetch(client: &reqwest::Client, target: &ScrapeTarget, timeout: Duration) -> Result<String, String> {
    let resp = client
        .get(target.url())
        .timeout(timeout)
        .send()
        .await
        .map_err(|e| e.to_string())?;
    if !resp.status().is_success() {
        return Err(format!("HTTP {}", resp.status()));
    }
    resp.text().await.map_err(|e| e.to_string())
}

/// Scrapes one target into `store`. An unreachable target is not an error:
/// each of its known series receives a staleness marker and `up` goes to 0.
pub async fn scrape_once(
    client: &reqwest::Client,
    target: &ScrapeTarget,
    store: &MetricStore,
    timeout: Duration,
) -> ScrapeReport {
    let body = fetch(client, target, timeout).await;
    let now = Utc::now();
    let up_key = stamp(target, UP_METRIC, Default::default());
    let mut report = ScrapeReport {
        up: body.is_ok(),
        timestamp: now,
        samples: 0,
        parse_errors: 0,
        rejected: 0,
        stale_marked: 0,
        error: None,
    };

    let mut batch = Vec::new();
    match body {
        Ok(text) => {
            let parsed = parse_exposition(&text);
            report.parse_errors = parsed.errors;
            report.samples = parsed.lines.len();
            for line in parsed.lines {
                batch.push(MetricSample {
                    series: stamp(target, &line.name, line.labels),
                    value: Some(line.value),
                    timestamp: now,
                });
            }
        }
        Err(e) => {
            tracing::debug!(target = %target.url(), error = %e, "scrape failed");
            for series in store.series(&target_filter(target)) {
                if series.metric == UP_METRIC {
                    continue;
                }
                let latest_stale = store
                    .query_latest(&series.metric, &LabelFilter(series.labels.clone()))
                    .iter()
                    .any(|s| s.series == series && s.is_stale());
                if !latest_stale {
                    batch.push(MetricSample {
                        series,
                        value: None,
                        timestamp: now,
                    });
                    report.stale_marked += 1;
                }
            }
            report.error = Some(e);
        }
    }
    batch.push(MetricSample {
        series: up_key,
        value: Some(if report.up { 1.0 } else { 0.0 }),
        timestamp: now,
    });
    match store.append_all(batch) {
        Ok(rejected) => report.rejected = rejected,
        Err(e) => tracing::warn!(error = %e, "persisting scrape failed"),
    }
    report.samples = report.samples.saturating_sub(report.rejected);
    report
}

/// Scrapes `target` every `interval_s` seconds until the handle is aborted.
/// Ticks missed while a scrape is slow are not bunched up.
pub fn spawn_scraper(client: reqwest::Client, target: ScrapeTarget, store: Arc<MetricStore>) -> JoinHandle<()> {
    tokio::spawn(async move {
        let period = Duration::from_millis((target.interval_s.max(1)) * 1000);
        let mut tick = tokio::time::interval(period);
        tick.set_missed_tick_behavior(MissedTickBehavior::Delay);
        loop {
            tick.tick().await;
            scrape_once(&client, &target, &store, period).await;
        }
    })
}
