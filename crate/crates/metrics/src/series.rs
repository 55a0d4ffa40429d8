use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Metric name plus its full label set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesKey {
    pub metric: String,
    pub labels: BTreeMap<String, String>,
}

impl SeriesKey {
    pub fn new(metric: impl Into<String>) -> Self {
        SeriesKey {
            metric: metric.into(),
            labels: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.labels.insert(key.into(), value.into());
        self
    }

    pub fn label(&self, key: &str) -> Option<&str> {
        self.labels.get(key).map(String::as_str)
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.metric)?;
        if !self.labels.is_empty() {
            f.write_str("{")?;
            for (i, (k, v)) in self.labels.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{k}=\"{}\"", crate::exposition::escape_label_value(v))?;
            }
            f.write_str("}")?;
        }
        Ok(())
    }
}

/// One point of a series. `value` is `None` for a staleness marker, written
/// when the series' exporter could not be reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub series: SeriesKey,
    pub value: Option<f64>,
    pub timestamp: DateTime<Utc>,
}

impl MetricSample {
    pub fn is_stale(&self) -> bool {
        self.value.is_none()
    }
}

/// Exact-match label constraints; an empty filter matches every series.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelFilter(pub BTreeMap<String, String>);

impl LabelFilter {
    pub fn any() -> Self {
        LabelFilter::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.0.insert(key.into(), value.into());
        self
    }

    /// Parses `k=v` pairs separated by commas.
    pub fn parse(text: &str) -> Option<Self> {
        let mut f = LabelFilter::default();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=')?;
            f.0.insert(k.trim().to_string(), v.trim().trim_matches('"').to_string());
        }
        Some(f)
    }

    pub fn matches(&self, key: &SeriesKey) -> bool {
        self.0.iter().all(|(k, v)| key.labels.get(k) == Some(v))
    }
}
