//! Runs a scenario end to end and writes its artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::charts::{emit_charts, write_charts};
use crate::config::{RunMode, ScenarioConfig};
use crate::live::{run_live, LiveError, LiveOptions};
use crate::metrics::{
    export, finalize_row, BytesReport, ExportFormat, MessageCounts, MetricsError, ResourceSource,
    ResourceSummary, RunReport,
};
use crate::model::MessageId;
use crate::sim::{simulate, SimError, SimOutput};
use crate::storage::StorageError;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario `{scenario}`: {source}")]
    Sim {
        scenario: String,
        #[source]
        source: SimError,
    },
    #[error("scenario `{scenario}` (live): {source}")]
    Live {
        scenario: String,
        #[source]
        source: LiveError,
    },
    #[error("scenario `{scenario}`: {source}")]
    Metrics {
        scenario: String,
        #[source]
        source: MetricsError,
    },
    #[error("scenario `{scenario}`: writing {path}: {source}")]
    Io {
        scenario: String,
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario `{scenario}`: {source}")]
    Storage {
        scenario: String,
        #[source]
        source: StorageError,
    },
}

#[derive(Clone, Default)]
pub struct RunOptions {
    /// Directory for report.json, metrics.csv and charts/; nothing is
    /// written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Directory to mirror blob contents into.
    pub persist_blobs: Option<PathBuf>,
    /// Settings for live mode; ignored in virtual mode.
    pub live: LiveOptions,
}

pub struct RunOutcome {
    pub report: RunReport,
    /// Emitted messages that never reached a blob.
    pub incomplete: Vec<MessageId>,
    pub artifacts: Vec<PathBuf>,
    pub output: SimOutput,
}

impl RunOutcome {
    /// True when every emitted message ended up in storage exactly once.
    pub fn is_complete(&self) -> bool {
        self.incomplete.is_empty() && self.conserved()
    }

    /// Blob contents equal the emitted messages as a multiset.
    pub fn conserved(&self) -> bool {
        let mut stored: BTreeMap<MessageId, u32> = BTreeMap::new();
        for b in self.output.store.blobs() {
            for id in &b.message_ids {
                *stored.entry(*id).or_default() += 1;
            }
        }
        stored.len() == self.output.traces.len()
            && stored
                .iter()
                .all(|(id, n)| *n == 1 && self.output.traces.contains_key(id))
    }
}

/// Builds the report for a finished run; also returns incomplete ids.
pub fn build_report(config: &ScenarioConfig, output: &SimOutput) -> (RunReport, Vec<MessageId>) {
    let mut rows = Vec::with_capacity(output.traces.len());
    let mut incomplete = Vec::new();
    for trace in output.traces.values() {
        match finalize_row(trace.id, &trace.timestamps(), trace.payload_bytes) {
            Ok(row) => rows.push(row),
            Err(_) => incomplete.push(trace.id),
        }
    }
    let messages = MessageCounts {
        emitted: output.traces.len() as u64,
        delivered: output.traces.values().filter(|t| t.t2.is_some()).count() as u64,
        dropped: output.dropped,
        stored: output
            .store
            .blobs()
            .iter()
            .map(|b| b.message_ids.len() as u64)
            .sum(),
        blobs: output.store.len() as u64,
        incomplete: incomplete.len() as u64,
    };
    let bytes = BytesReport {
        per_source: output.ledger.report().clone(),
        total: output.ledger.total(),
    };
    let source = match config.mode {
        RunMode::Virtual => ResourceSource::Modeled,
        RunMode::Live => ResourceSource::Measured,
    };
    let resources = ResourceSummary::from_samples(source, &output.resource_samples);
    (
        RunReport::new(config, messages, rows, bytes, resources),
        incomplete,
    )
}

/// Writes report.json, metrics.csv and charts/*.svg into `dir`.
pub fn write_artifacts(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
    let io = |path: &Path, source| ScenarioError::Io {
        scenario: report.name.clone(),
        path: path.display().to_string(),
        source,
    };
    let metrics = |source| ScenarioError::Metrics {
        scenario: report.name.clone(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();
    for (file, format) in [
        ("report.json", ExportFormat::Json),
        ("metrics.csv", ExportFormat::Csv),
    ] {
        let path = dir.join(file);
        fs::write(&path, export(report, format).map_err(metrics)?).map_err(|e| io(&path, e))?;
        written.push(path);
    }
    let charts = emit_charts(std::slice::from_ref(report)).expect("one report");
    let chart_dir = dir.join("charts");
    written.extend(write_charts(&charts, &chart_dir).map_err(|e| io(&chart_dir, e))?);
    Ok(written)
}

pub fn run_scenario(
    config: &ScenarioConfig,
    opts: &RunOptions,
) -> Result<RunOutcome, ScenarioError> {
    let scenario = config.name.clone();
    let output = match config.mode {
        RunMode::Virtual => simulate(config).map_err(|source| ScenarioError::Sim {
            scenario: scenario.clone(),
            source,
        })?,
        RunMode::Live => run_live(config, &opts.live).map_err(|source| ScenarioError::Live {
            scenario: scenario.clone(),
            source,
        })?,
    };
    let (report, incomplete) = build_report(config, &output);
    let mut artifacts = match &opts.out_dir {
        Some(dir) => write_artifacts(&report, dir)?,
        None => Vec::new(),
    };
    if let Some(dir) = &opts.persist_blobs {
        output
            .store
            .persist_to(dir)
            .map_err(|source| ScenarioError::Storage {
                scenario: scenario.clone(),
                source,
            })?;
        artifacts.push(dir.clone());
    }
    Ok(RunOutcome {
        report,
        incomplete,
        artifacts,
        output,
    })
}
