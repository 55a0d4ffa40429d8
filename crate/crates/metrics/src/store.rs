use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::series::{LabelFilter, MetricSample, SeriesKey};
use crate::MetricsError;

pub const DEFAULT_RING_CAPACITY: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub timestamp: DateTime<Utc>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoints {
    pub series: SeriesKey,
    pub points: Vec<Point>,
}

type Index = HashMap<String, BTreeMap<SeriesKey, VecDeque<Point>>>;

struct DayFile {
    day: String,
    out: BufWriter<File>,
}

/// In-memory ring per series, optionally mirrored to one JSON-lines file
/// per UTC day (`samples-YYYY-MM-DD.jsonl`).
pub struct MetricStore {
    index: RwLock<Index>,
    capacity: usize,
    dir: Option<PathBuf>,
    file: Mutex<Option<DayFile>>,
}

impl MetricStore {
    pub fn in_memory(capacity: usize) -> Self {
        MetricStore {
            index: RwLock::new(HashMap::new()),
            capacity: capacity.max(1),
            dir: None,
            file: Mutex::new(None),
        }
    }

    /// Opens a persistent store, replaying every day file found in `dir`.
    pub fn open(dir: &Path, capacity: usize) -> Result<Self, MetricsError> {
        fs::create_dir_all(dir)?;
        let store = MetricStore {
            index: RwLock::new(HashMap::new()),
            capacity: capacity.max(1),
            dir: Some(dir.to_path_buf()),
            file: Mutex::new(None),
        };
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("samples-") && n.ends_with(".jsonl"))
            })
            .collect();
        files.sort();
        for path in files {
            store.replay_file(&path)?;
        }
        Ok(store)
    }

    fn replay_file(&self, path: &Path) -> Result<(), MetricsError> {
        let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<Result<_, _>>()?;
        let last = lines.len().saturating_sub(1);
        let mut index = self.index.write();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<MetricSample>(line) {
                Ok(s) => {
                    // Anything that was persisted passed the ordering check.
                    let _ = self.insert(&mut index, s);
                }
                // A torn final line from an interrupted write.
                Err(_) if i == last => {}
                Err(e) => {
                    return Err(MetricsError::Corrupt {
                        file: path.display().to_string(),
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(())
    }

    fn insert(&self, index: &mut Index, sample: MetricSample) -> Result<(), MetricsError> {
        let ring = index
            .entry(sample.series.metric.clone())
            .or_default()
            .entry(sample.series.clone())
            .or_default();
        if let Some(last) = ring.back() {
            if sample.timestamp <= last.timestamp {
                return Err(MetricsError::NotIncreasing {
                    series: sample.series.to_string(),
                    timestamp: sample.timestamp.to_rfc3339(),
                });
            }
        }
        ring.push_back(Point {
            timestamp: sample.timestamp,
            value: sample.value,
        });
        while ring.len() > self.capacity {
            ring.pop_front();
        }
        Ok(())
    }

    fn persist(&self, sample: &MetricSample) -> Result<(), MetricsError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let day = sample.timestamp.format("%Y-%m-%d").to_string();
        let mut guard = self.file.lock();
        if guard.as_ref().is_none_or(|f| f.day != day) {
            if let Some(mut old) = guard.take() {
                old.out.flush()?;
            }
            let path = dir.join(format!("samples-{day}.jsonl"));
            let file = OpenOptions::new().create(true).append(true).open(path)?;
            *guard = Some(DayFile {
                day,
                out: BufWriter::new(file),
            });
        }
        let f = guard.as_mut().expect("day file opened above");
        serde_json::to_writer(&mut f.out, sample).map_err(|e| MetricsError::Io(e.into()))?;
        f.out.write_all(b"\n")?;
        f.out.flush()?;
        Ok(())
    }

    /// Appends one sample. Timestamps must strictly increase per series.
    pub fn append(&self, sample: MetricSample) -> Result<(), MetricsError> {
        let mut index = self.index.write();
        self.insert(&mut index, sample.clone())?;
        self.persist(&sample)
    }

    /// Appends a batch, returning how many were rejected as out of order.
    pub fn append_all(&self, samples: impl IntoIterator<Item = MetricSample>) -> Result<usize, MetricsError> {
        let mut rejected = 0;
        for s in samples {
            match self.append(s) {
                Ok(()) => {}
                Err(MetricsError::NotIncreasing { .. }) => rejected += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(rejected)
    }

    /// Newest sample of every matching series, stale markers included.
    pub fn query_latest(&self, metric: &str, filter: &LabelFilter) -> Vec<MetricSample> {
        let index = self.index.read();
        let Some(series) = index.get(metric) else { return Vec::new() };
        series
            .iter()
            .filter(|(k, _)| filter.matches(k))
            .filter_map(|(k, ring)| {
                ring.back().map(|p| MetricSample {
                    series: k.clone(),
                    value: p.value,
                    timestamp: p.timestamp,
                })
            })
            .collect()
    }

    /// Samples with `t0 <= timestamp <= t1`, per matching series, oldest
    /// first. Series with no point in the window are omitted.
    pub fn query_range(
        &self,
        metric: &str,
        filter: &LabelFilter,
        t0: DateTime<Utc>,
        t1: DateTime<Utc>,
    ) -> Vec<SeriesPoints> {
        let index = self.index.read();
        let Some(series) = index.get(metric) else { return Vec::new() };
        series
            .iter()
            .filter(|(k, _)| filter.matches(k))
            .filter_map(|(k, ring)| {
                let points: Vec<Point> = ring
                    .iter()
                    .filter(|p| p.timestamp >= t0 && p.timestamp <= t1)
                    .copied()
                    .collect();
                (!points.is_empty()).then(|| SeriesPoints {
                    series: k.clone(),
                    points,
                })
            })
            .collect()
    }

    /// Every known series matching `filter`, across all metrics.
    pub fn series(&self, filter: &LabelFilter) -> Vec<SeriesKey> {
        let index = self.index.read();
        let mut out: Vec<SeriesKey> = index
            .values()
            .flat_map(|m| m.keys())
            .filter(|k| filter.matches(k))
            .cloned()
            .collect();
        out.sort();
        out
    }

    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.index.read().keys().cloned().collect();
        names.sort();
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeDelta, TimeZone};
    use proptest::prelude::*;

    fn at(s: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 5, 1, 23, 59, 0).unwrap() + TimeDelta::seconds(s)
    }

    fn sample(pod: &str, v: Option<f64>, t: i64) -> MetricSample {
        MetricSample {
            series: SeriesKey::new("cpu").with("pod", pod),
            value: v,
            timestamp: at(t),
        }
    }

    #[test]
    fn latest_is_most_recent() {
        let s = MetricStore::in_memory(10);
        s.append(sample("a", Some(1.0), 0)).unwrap();
        s.append(sample("a", Some(2.0), 1)).unwrap();
        let l = s.query_latest("cpu", &LabelFilter::any());
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].value, Some(2.0));
        assert!(s.query_latest("nope", &LabelFilter::any()).is_empty());
    }

    #[test]
    fn range_is_inclusive() {
        let s = MetricStore::in_memory(10);
        for t in 0..10 {
            s.append(sample("a", Some(t as f64), t)).unwrap();
        }
        let r = s.query_range("cpu", &LabelFilter::any(), at(3), at(6));
        let got: Vec<f64> = r[0].points.iter().map(|p| p.value.unwrap()).collect();
        assert_eq!(got, vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn filter_selects_series() {
        let s = MetricStore::in_memory(10);
        s.append(sample("a", Some(1.0), 0)).unwrap();
        s.append(sample("b", Some(2.0), 0)).unwrap();
        let l = s.query_latest("cpu", &LabelFilter::any().with("pod", "a"));
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].series.label("pod"), Some("a"));
    }

    #[test]
    fn rejects_non_increasing() {
        let s = MetricStore::in_memory(10);
        s.append(sample("a", Some(1.0), 5)).unwrap();
        assert!(s.append(sample("a", Some(1.0), 5)).is_err());
        assert!(s.append(sample("a", Some(1.0), 4)).is_err());
        assert_eq!(s.append_all([sample("a", Some(1.0), 3), sample("a", None, 6)]).unwrap(), 1);
        assert!(s.query_latest("cpu", &LabelFilter::any())[0].is_stale());
    }

    #[test]
    fn ring_evicts_oldest() {
        let s = MetricStore::in_memory(3);
        for t in 0..5 {
            s.append(sample("a", Some(t as f64), t)).unwrap();
        }
        let r = s.query_range("cpu", &LabelFilter::any(), at(0), at(10));
        assert_eq!(r[0].points.len(), 3);
        assert_eq!(r[0].points[0].value, Some(2.0));
    }

    #[test]
    fn persistence_splits_days_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let s = MetricStore::open(dir.path(), 100).unwrap();
        for t in 0..120 {
            s.append(sample(if t % 2 == 0 { "a" } else { "b" }, Some(t as f64), t)).unwrap();
        }
        s.append(sample("a", None, 500)).unwrap();
        let mut names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, vec!["samples-2024-05-01.jsonl", "samples-2024-05-02.jsonl"]);

        let again = MetricStore::open(dir.path(), 100).unwrap();
        assert_eq!(
            again.query_latest("cpu", &LabelFilter::any()),
            s.query_latest("cpu", &LabelFilter::any())
        );
        assert_eq!(
            again.query_range("cpu", &LabelFilter::any(), at(0), at(1000)),
            s.query_range("cpu", &LabelFilter::any(), at(0), at(1000))
        );
    }

    #[test]
    fn torn_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = MetricStore::open(dir.path(), 10).unwrap();
            s.append(sample("a", Some(1.0), 0)).unwrap();
        }
        let path = dir.path().join("samples-2024-05-01.jsonl");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"series\":{\"met").unwrap();
        let s = MetricStore::open(dir.path(), 10).unwrap();
        assert_eq!(s.query_latest("cpu", &LabelFilter::any()).len(), 1);
    }

    proptest! {
        #[test]
        fn replay_reconstructs_queries(ops in proptest::collection::vec((0usize..3, 0i64..50, proptest::option::of(0.0f64..100.0)), 0..60)) {
            let dir = tempfile::tempdir().unwrap();
            let s = MetricStore::open(dir.path(), 16).unwrap();
            for (pod, t, v) in ops {
                let _ = s.append(sample(&format!("p{pod}"), v, t * 1000));
            }
            let again = MetricStore::open(dir.path(), 16).unwrap();
            let all = LabelFilter::any();
            prop_assert_eq!(again.query_latest("cpu", &all), s.query_latest("cpu", &all));
            prop_assert_eq!(
                again.query_range("cpu", &all, at(-10), at(100_000)),
                s.query_range("cpu", &all, at(-10), at(100_000))
            );
        }
    }
}
