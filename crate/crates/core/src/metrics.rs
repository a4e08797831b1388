//! Per-message metric rows, aggregates and run reports.
//!
//! CSV column order is fixed:
//! `id,c_edge_ms,t1,t2,t3,flight_ms,residence_ms,e2e_ms,payload_bytes`.
//! Percentiles (median, p95) use the nearest-rank method: the value at
//! 1-based rank `ceil(p/100 · n)` of the sorted sample, so the median of an
//! even-sized sample is its lower middle value.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Pipeline, RunMode, ScenarioConfig};
use crate::model::{MessageId, Millis, TimestampRecord};
use crate::network::ByteTotals;
use crate::workloads::WorkloadKind;

pub const REPORT_SCHEMA: u32 = 1;

pub const CSV_HEADER: &str = "id,c_edge_ms,t1,t2,t3,flight_ms,residence_ms,e2e_ms,payload_bytes";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("message {id} is missing {missing}")]
    IncompleteRecord {
        id: MessageId,
        missing: &'static str,
    },
    #[error("no rows to aggregate")]
    EmptyRun,
    #[error("unsupported export format `{0}` (expected csv, json or svg-chart)")]
    UnsupportedFormat(String),
    #[error("export failed: {0}")]
    Export(String),
}

/// Derived metrics for one delivered message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: MessageId,
    pub c_edge_ms: Millis,
    pub t1: Millis,
    pub t2: Millis,
    pub t3: Millis,
    pub flight_ms: Millis,
    pub residence_ms: Millis,
    pub e2e_ms: Millis,
    pub payload_bytes: u64,
}

pub fn finalize_row(
    id: MessageId,
    ts: &TimestampRecord,
    payload_bytes: u64,
) -> Result<MetricRow, MetricsError> {
    let missing = |what| MetricsError::IncompleteRecord { id, missing: what };
    let t1 = ts.t1.ok_or_else(|| missing("t1"))?;
    let t2 = ts.t2.ok_or_else(|| missing("t2"))?;
    let t3 = ts.t3.ok_or_else(|| missing("t3"))?;
    Ok(MetricRow {
        id,
        c_edge_ms: ts.c_edge,
        t1,
        t2,
        t3,
        flight_ms: t2 - t1,
        residence_ms: t3 - t2,
        e2e_ms: ts.c_edge + (t3 - t1),
        payload_bytes,
    })
}

/// Summary statistics over one metric column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: u64,
    pub sum: i64,
    pub mean: f64,
    pub median: i64,
    pub p95: i64,
    pub min: i64,
    pub max: i64,
}

impl Aggregate {
    pub fn from_values(values: &[i64]) -> Result<Self, MetricsError> {
        if values.is_empty() {
            return Err(MetricsError::EmptyRun);
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let sum: i128 = sorted.iter().map(|&v| i128::from(v)).sum();
        let n = sorted.len();
        Ok(Self {
            count: n as u64,
            sum: sum as i64,
            mean: sum as f64 / n as f64,
            median: nearest_rank(&sorted, 50),
            p95: nearest_rank(&sorted, 95),
            min: sorted[0],
            max: sorted[n - 1],
        })
    }
}

/// Nearest-rank percentile of an ascending, non-empty sample.
pub fn nearest_rank(sorted: &[i64], percent: u32) -> i64 {
    let n = sorted.len();
    let rank = (percent.min(100) as usize * n).div_ceil(100).max(1);
    sorted[rank - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub c_edge_ms: Aggregate,
    pub flight_ms: Aggregate,
    pub residence_ms: Aggregate,
    pub e2e_ms: Aggregate,
    pub payload_bytes: Aggregate,
}

pub fn aggregate(rows: &[MetricRow]) -> Result<MetricSummary, MetricsError> {
    let column =
        |f: fn(&MetricRow) -> i64| Aggregate::from_values(&rows.iter().map(f).collect::<Vec<_>>());
    Ok(MetricSummary {
        c_edge_ms: column(|r| r.c_edge_ms)?,
        flight_ms: column(|r| r.flight_ms)?,
        residence_ms: column(|r| r.residence_ms)?,
        e2e_ms: column(|r| r.e2e_ms)?,
        payload_bytes: column(|r| r.payload_bytes as i64)?,
    })
}

/// Pools the rows of several runs (for example repeated trials) and
/// aggregates them together.
pub fn pooled(reports: &[RunReport]) -> Result<MetricSummary, MetricsError> {
    let rows: Vec<MetricRow> = reports
        .iter()
        .flat_map(|r| r.rows.iter().copied())
        .collect();
    aggregate(&rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceSource {
    /// Replayed from the configured resource profile.
    Modeled,
    /// Sampled from the running process.
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceSummary {
    pub source: ResourceSource,
    pub samples: u64,
    pub mean_cpu_pct: f64,
    pub mean_ram_mb: f64,
}

impl ResourceSummary {
    pub fn from_samples(source: ResourceSource, samples: &[(f64, f64)]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        Some(Self {
            source,
            samples: samples.len() as u64,
            mean_cpu_pct: samples.iter().map(|s| s.0).sum::<f64>() / n,
            mean_ram_mb: samples.iter().map(|s| s.1).sum::<f64>() / n,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageCounts {
    pub emitted: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Messages found in blobs at the end of the run.
    pub stored: u64,
    pub blobs: u64,
    /// Emitted messages lacking a timestamp at reporting time.
    pub incomplete: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BytesReport {
    pub per_source: BTreeMap<String, ByteTotals>,
    pub total: ByteTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub name: String,
    pub pipeline: Pipeline,
    pub platform_profile: String,
    pub workload: WorkloadKind,
    pub mode: RunMode,
    pub seed: Option<u64>,
    pub config_fingerprint: String,
    pub config: ScenarioConfig,
    pub messages: MessageCounts,
    /// `None` when no message completed.
    pub metrics: Option<MetricSummary>,
    pub bytes: BytesReport,
    pub resources: Option<ResourceSummary>,
    pub rows: Vec<MetricRow>,
}

impl RunReport {
    /// Builds a report; rows are sorted by id and aggregated.
    pub fn new(
        config: &ScenarioConfig,
        messages: MessageCounts,
        mut rows: Vec<MetricRow>,
        bytes: BytesReport,
        resources: Option<ResourceSummary>,
    ) -> Self {
        rows.sort_by_key(|r| r.id);
        Self {
            schema: REPORT_SCHEMA,
            name: config.name.clone(),
            pipeline: config.pipeline,
            platform_profile: config.platform_profile.clone(),
            workload: config.workload.kind,
            mode: config.mode,
            seed: config.seed,
            config_fingerprint: config.fingerprint(),
            config: config.clone(),
            messages,
            metrics: aggregate(&rows).ok(),
            bytes,
            resources,
            rows,
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
    SvgChart,
}

impl FromStr for ExportFormat {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "svg-chart" | "svg" => Ok(Self::SvgChart),
            other => Err(MetricsError::UnsupportedFormat(other.to_string())),
        }
    }
}

pub fn export(report: &RunReport, format: ExportFormat) -> Result<Vec<u8>, MetricsError> {
    match format {
        ExportFormat::Csv => rows_to_csv(&report.rows),
        ExportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report)
                .map_err(|e| MetricsError::Export(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
        ExportFormat::SvgChart => Ok(crate::charts::report_figure(report).into_bytes()),
    }
}

pub fn rows_to_csv(rows: &[MetricRow]) -> Result<Vec<u8>, MetricsError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(','))
        .map_err(|e| MetricsError::Export(e.to_string()))?;
    for row in rows {
        w.serialize(row)
            .map_err(|e| MetricsError::Export(e.to_string()))?;
    }
    w.into_inner()
        .map_err(|e| MetricsError::Export(e.to_string()))
}

pub fn rows_from_csv(bytes: &[u8]) -> Result<Vec<MetricRow>, MetricsError> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| MetricsError::Export(e.to_string()))
}
