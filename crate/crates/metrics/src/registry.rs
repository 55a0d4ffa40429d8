use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::MetricsError;

pub const DEFAULT_PORT_RANGE: RangeInclusive<u16> = 20000..=49999;

/// Who a target's series belong to. `pod` is `None` for a node's own
/// agent endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TargetOwner {
    pub node: String,
    pub pod: Option<String>,
}

impl TargetOwner {
    pub fn node(node: impl Into<String>) -> Self {
        TargetOwner {
            node: node.into(),
            pod: None,
        }
    }

    pub fn pod(node: impl Into<String>, pod: impl Into<String>) -> Self {
        TargetOwner {
            node: node.into(),
            pod: Some(pod.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrapeTarget {
    pub owner: TargetOwner,
    pub advertised_ip: String,
    pub advertised_port: u16,
    /// Cluster-unique port this exporter is known by.
    pub mapped_port: u16,
    /// Where the scraper actually connects, `host:port`. Registration
    /// supplies it because the advertised address may be shared and
    /// unreachable directly.
    pub route: String,
    /// URL path scraped on `route`.
    pub path: String,
    pub interval_s: u64,
}

impl ScrapeTarget {
    /// `ip:mapped_port`, stamped on every series as `instance`.
    pub fn instance(&self) -> String {
        format!("{}:{}", self.advertised_ip, self.mapped_port)
    }

    pub fn url(&self) -> String {
        format!("http://{}{}", self.route, self.path)
    }
}

/// Assigns mapped ports. An exporter keeps its advertised port as long as
/// its `ip:port` is unique; once a second owner advertises the same pair,
/// every owner of that pair is moved to a fresh port from the range.
#[derive(Debug, Clone)]
pub struct TargetRegistry {
    range: RangeInclusive<u16>,
    targets: BTreeMap<TargetOwner, ScrapeTarget>,
}

impl Default for TargetRegistry {
    fn default() -> Self {
        TargetRegistry {
            range: DEFAULT_PORT_RANGE,
            targets: BTreeMap::new(),
        }
    }
}

impl TargetRegistry {
    pub fn with_range(range: RangeInclusive<u16>) -> Result<Self, MetricsError> {
        if range.is_empty() {
            return Err(MetricsError::InvalidRange {
                lo: *range.start(),
                hi: *range.end(),
            });
        }
        Ok(TargetRegistry {
            range,
            targets: BTreeMap::new(),
        })
    }

    pub fn targets(&self) -> impl Iterator<Item = &ScrapeTarget> {
        self.targets.values()
    }

    pub fn get(&self, owner: &TargetOwner) -> Option<&ScrapeTarget> {
        self.targets.get(owner)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn used_ports(&self) -> BTreeSet<u16> {
        self.targets.values().map(|t| t.mapped_port).collect()
    }

    fn free_ports(&self, n: usize) -> Result<Vec<u16>, MetricsError> {
        let used = self.used_ports();
        let free: Vec<u16> = self.range.clone().filter(|p| !used.contains(p)).take(n).collect();
        if free.len() < n {
            return Err(MetricsError::PortRangeExhausted {
                lo: *self.range.start(),
                hi: *self.range.end(),
            });
        }
        Ok(free)
    }

    /// Registers or refreshes `owner`'s exporter. Re-registering the same
    /// owner with the same address keeps its mapping. On error nothing
    /// changes.
    pub fn register(
        &mut self,
        owner: TargetOwner,
        ip: &str,
        port: u16,
        route: &str,
        path: &str,
        interval_s: u64,
    ) -> Result<ScrapeTarget, MetricsError> {
        if let Some(existing) = self.targets.get_mut(&owner) {
            if existing.advertised_ip == ip && existing.advertised_port == port {
                existing.route = route.to_string();
                existing.path = path.to_string();
                existing.interval_s = interval_s;
                return Ok(existing.clone());
            }
        }
        let previous = self.targets.remove(&owner);

        let sharing: Vec<TargetOwner> = self
            .targets
            .values()
            .filter(|t| t.advertised_ip == ip && t.advertised_port == port)
            .map(|t| t.owner.clone())
            .collect();
        let port_taken = self.used_ports().contains(&port);

        let mut target = ScrapeTarget {
            owner: owner.clone(),
            advertised_ip: ip.to_string(),
            advertised_port: port,
            mapped_port: port,
            route: route.to_string(),
            path: path.to_string(),
            interval_s,
        };

        if sharing.is_empty() && !port_taken {
            self.targets.insert(owner, target.clone());
            return Ok(target);
        }

        // Sharers still on their advertised port move off it as well.
        let identity: Vec<TargetOwner> = sharing
            .into_iter()
            .filter(|o| self.targets[o].mapped_port == port)
            .collect();
        let fresh = match self.free_ports(identity.len() + 1) {
            Ok(f) => f,
            Err(e) => {
                if let Some(prev) = previous {
                    self.targets.insert(prev.owner.clone(), prev);
                }
                return Err(e);
            }
        };
        for (o, p) in identity.iter().zip(&fresh) {
            if let Some(t) = self.targets.get_mut(o) {
                t.mapped_port = *p;
            }
        }
        target.mapped_port = fresh[identity.len()];
        self.targets.insert(owner, target.clone());
        Ok(target)
    }

    pub fn unregister(&mut self, owner: &TargetOwner) -> Option<ScrapeTarget> {
        self.targets.remove(owner)
    }

    /// Drops every target owned by `node`.
    pub fn unregister_node(&mut self, node: &str) -> Vec<ScrapeTarget> {
        let owners: Vec<TargetOwner> = self.targets.keys().filter(|o| o.node == node).cloned().collect();
        owners.iter().filter_map(|o| self.targets.remove(o)).collect()
    }
}
