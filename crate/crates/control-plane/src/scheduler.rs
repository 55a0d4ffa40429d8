//! Pod placement: filter Ready nodes by selector, taints and affinity, then
//! pick the least-loaded candidate, breaking ties by name.

use jiriaf_core::{match_affinity_labels, PodSpec, Toleration};

use crate::state::NodeRecord;

/// Every taint is matched by a toleration with the same key, value and
/// effect.
pub fn tolerates(tolerations: &[Toleration], taints: &[Toleration]) -> bool {
    taints.iter().all(|taint| tolerations.contains(taint))
}

pub fn feasible(pod: &PodSpec, node: &NodeRecord) -> bool {
    if !node.is_ready() {
        return false;
    }
    let labels = node.label_map();
    let selected = pod
        .node_selector
        .iter()
        .all(|(k, v)| labels.get(k).is_some_and(|have| have == v));
    selected && tolerates(&pod.tolerations, &node.taints) && match_affinity_labels(&labels, &pod.affinity).unwrap_or(false)
}

/// Chooses a node for `pod`, or `None` if no node qualifies. `load` gives
/// the number of pods already assigned to a node.
pub fn schedule<'a>(
    pod: &PodSpec,
    nodes: impl IntoIterator<Item = &'a NodeRecord>,
    load: impl Fn(&str) -> usize,
) -> Option<String> {
    nodes
        .into_iter()
        .filter(|n| feasible(pod, n))
        .min_by(|a, b| load(&a.name).cmp(&load(&b.name)).then_with(|| a.name.cmp(&b.name)))
        .map(|n| n.name.clone())
}
