//! Metrics pipeline: exporter registration, scraping and storage.
//!
//! Many pods on one host may advertise the same `ip:port`. The
//! [`TargetRegistry`] gives each of them a distinct mapped port and the
//! scraper stamps every sample with its owner's `node` and `pod`, so series
//! from colliding exporters never merge.

mod exposition;
mod registry;
mod scrape;
mod series;
mod store;

pub use exposition::{parse_exposition, render_exposition, ExpositionLine, ParsedExposition};
pub use registry::{ScrapeTarget, TargetOwner, TargetRegistry, DEFAULT_PORT_RANGE};
pub use scrape::{scrape_once, spawn_scraper, ScrapeReport, UP_METRIC};
pub use series::{LabelFilter, MetricSample, SeriesKey};
pub use store::{MetricStore, Point, SeriesPoints, DEFAULT_RING_CAPACITY};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no free mapped port in {lo}-{hi}")]
    PortRangeExhausted { lo: u16, hi: u16 },
    #[error("invalid port range {lo}-{hi}")]
    InvalidRange { lo: u16, hi: u16 },
    #[error("sample for {series} at {timestamp} is not newer than the last one")]
    NotIncreasing { series: String, timestamp: String },
    #[error("metrics store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt sample record in {file} line {line}: {message}")]
    Corrupt { file: String, line: usize, message: String },
}
