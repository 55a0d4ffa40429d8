//! Fixed-width listings. Rows are sorted by name so identical server state
//! renders identically.

use std::collections::BTreeMap;

use jiriaf_core::api::{DeploymentView, NodeStatus, NodeView, PodView};
use jiriaf_launcher::render_table;
use jiriaf_metrics::MetricSample;

const NONE: &str = "-";

fn sorted_by<T>(items: &[T], key: impl Fn(&T) -> &str) -> Vec<&T> {
    let mut v: Vec<&T> = items.iter().collect();
    v.sort_by(|a, b| key(a).cmp(key(b)));
    v
}

pub fn nodes(nodes: &[NodeView]) -> String {
    let rows: Vec<Vec<String>> = sorted_by(nodes, |n| &n.name)
        .into_iter()
        .map(|n| {
            vec![
                n.name.clone(),
                match n.status {
                    NodeStatus::Ready => "Ready".into(),
                    NodeStatus::NotReady => "NotReady".into(),
                },
                n.labels.nodetype.clone(),
                n.labels.site.clone(),
                n.labels.alivetime.map(|a| a.to_string()).unwrap_or_else(|| NONE.into()),
            ]
        })
        .collect();
    render_table(&["NAME", "STATUS", "NODETYPE", "SITE", "ALIVETIME"], &rows)
}

pub fn pods(pods: &[PodView]) -> String {
    let rows: Vec<Vec<String>> = sorted_by(pods, |p| &p.name)
        .into_iter()
        .map(|p| {
            vec![
                p.name.clone(),
                p.node.clone().unwrap_or_else(|| NONE.into()),
                p.ready.to_string(),
                p.state_uid.clone(),
            ]
        })
        .collect();
    render_table(&["NAME", "NODE", "READY", "STATE-UID"], &rows)
}

pub fn deployments(deployments: &[DeploymentView]) -> String {
    let rows: Vec<Vec<String>> = sorted_by(deployments, |d| &d.name)
        .into_iter()
        .map(|d| vec![d.name.clone(), d.replicas.to_string(), d.live.to_string(), d.ready.to_string()])
        .collect();
    render_table(&["NAME", "REPLICAS", "LIVE", "READY"], &rows)
}

/// Latest CPU reading per pod joined with the pod list. Pods without a
/// reading show `-`.
pub fn top_pods(pods: &[PodView], samples: &[MetricSample]) -> String {
    let mut latest: BTreeMap<&str, &MetricSample> = BTreeMap::new();
    for s in samples {
        let Some(pod) = s.series.label("pod") else { continue };
        if s.value.is_none() {
            continue;
        }
        let newer = latest.get(pod).is_none_or(|cur| cur.timestamp < s.timestamp);
        if newer {
            latest.insert(pod, s);
        }
    }
    let rows: Vec<Vec<String>> = sorted_by(pods, |p| &p.name)
        .into_iter()
        .map(|p| {
            let cpu = latest
                .get(p.name.as_str())
                .and_then(|s| s.value)
                .map(|v| format!("{v:.1}"))
                .unwrap_or_else(|| NONE.into());
            vec![p.name.clone(), p.node.clone().unwrap_or_else(|| NONE.into()), cpu]
        })
        .collect();
    render_table(&["NAME", "NODE", "CPU(%)"], &rows)
}
