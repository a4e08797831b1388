//! Benchmark workload drivers.
//!
//! The audio, image and scalar pipelines are reproduced through calibrated
//! compute-time and size distributions rather than real decoders or models.
//! A driver turns a [`WorkloadSpec`] into a sequence of compute records and
//! result messages, one item at a time.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::dist::{Distribution, InvalidDistribution};
use crate::model::{secs_to_ms, Message, MessageId, Millis};
use crate::rng::SeededRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("invalid scalar rate: frequency {freq_hz} Hz over {interval_s} s")]
    InvalidRate { freq_hz: f64, interval_s: f64 },
    #[error("workload exhausted: item {idx} requested but only {items} items exist")]
    ExhaustedWorkload { idx: u64, items: u64 },
    #[error("invalid workload: {0}")]
    Invalid(String),
    #[error("{field}: {source}")]
    Distribution {
        field: &'static str,
        source: InvalidDistribution,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    Audio,
    Image,
    Scalar,
    Custom,
}

impl WorkloadKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            WorkloadKind::Audio => "audio",
            WorkloadKind::Image => "image",
            WorkloadKind::Scalar => "scalar",
            WorkloadKind::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub items: u64,
    #[serde(default)]
    pub input_bytes_per_item: Distribution,
    #[serde(default)]
    pub compute_ms: Distribution,
    /// Ignored for scalar workloads, whose payload is the serialized batch.
    #[serde(default)]
    pub result_payload_bytes: Distribution,
    #[serde(default)]
    pub inter_item_gap_ms: Distribution,
    pub scalar_freq_hz: Option<f64>,
    pub scalar_interval_s: Option<f64>,
    #[serde(default)]
    pub warmup_delay_s: f64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.items == 0 {
            return Err(WorkloadError::Invalid("items must be at least 1".into()));
        }
        if !(self.warmup_delay_s.is_finite() && self.warmup_delay_s >= 0.0) {
            return Err(WorkloadError::Invalid(format!(
                "warmup_delay_s must be >= 0, got {}",
                self.warmup_delay_s
            )));
        }
        if self.kind == WorkloadKind::Scalar {
            let (freq_hz, interval_s) = self.scalar_rate()?;
            check_rate(freq_hz, interval_s)?;
        }
        let dists: [(&'static str, &Distribution); 4] = [
            ("input_bytes_per_item", &self.input_bytes_per_item),
            ("compute_ms", &self.compute_ms),
            ("result_payload_bytes", &self.result_payload_bytes),
            ("inter_item_gap_ms", &self.inter_item_gap_ms),
        ];
        for (field, d) in dists {
            d.validate_non_negative()
                .map_err(|source| WorkloadError::Distribution { field, source })?;
        }
        Ok(())
    }

    fn scalar_rate(&self) -> Result<(f64, f64), WorkloadError> {
        match (self.scalar_freq_hz, self.scalar_interval_s) {
            (Some(f), Some(i)) => Ok((f, i)),
            _ => Err(WorkloadError::Invalid(
                "scalar workloads need scalar_freq_hz and scalar_interval_s".into(),
            )),
        }
    }

    pub fn warmup_ms(&self) -> Millis {
        secs_to_ms(self.warmup_delay_s)
    }

    /// Emit cadence of a scalar workload.
    pub fn scalar_interval_ms(&self) -> Option<Millis> {
        match self.kind {
            WorkloadKind::Scalar => self.scalar_interval_s.map(secs_to_ms),
            _ => None,
        }
    }
}

/// Per-item device work that produced one message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeRecord {
    pub item_index: u64,
    pub c_edge_ms: Millis,
    pub payload_bytes: u64,
    pub input_bytes: u64,
}

/// Modeled device resource usage while a workload runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceProfile {
    pub cpu_pct: Distribution,
    pub ram_mb: Distribution,
    #[serde(default)]
    pub platform_ram_delta_mb: f64,
    #[serde(default = "default_cores")]
    pub cores: u32,
}

fn default_cores() -> u32 {
    4
}

impl ResourceProfile {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        self.cpu_pct
            .validate_non_negative()
            .map_err(|source| WorkloadError::Distribution {
                field: "cpu_pct",
                source,
            })?;
        self.ram_mb
            .validate_non_negative()
            .map_err(|source| WorkloadError::Distribution {
                field: "ram_mb",
                source,
            })?;
        if self.cores == 0 || !self.platform_ram_delta_mb.is_finite() {
            return Err(WorkloadError::Invalid(
                "resource profile needs cores >= 1 and a finite ram delta".into(),
            ));
        }
        Ok(())
    }

    /// One `(cpu %, ram MB)` reading, clamped to `[0, 100·cores]` and `≥ 0`.
    pub fn sample(&self, rng: &mut SeededRng) -> (f64, f64) {
        let cpu = self.cpu_pct.sample(rng).unwrap_or(0.0);
        let ram = self.ram_mb.sample(rng).unwrap_or(0.0) + self.platform_ram_delta_mb;
        (cpu.clamp(0.0, 100.0 * f64::from(self.cores)), ram.max(0.0))
    }
}

fn check_rate(freq_hz: f64, interval_s: f64) -> Result<(), WorkloadError> {
    let ok = freq_hz.is_finite() && interval_s.is_finite() && freq_hz > 0.0 && interval_s > 0.0;
    if ok {
        Ok(())
    } else {
        Err(WorkloadError::InvalidRate {
            freq_hz,
            interval_s,
        })
    }
}

/// Number of readings a scalar sensor produces in one interval.
pub fn scalar_count(freq_hz: f64, interval_s: f64) -> u64 {
    // The epsilon keeps products such as 0.29 * 100 from flooring one low.
    (freq_hz * interval_s + 1e-9).floor() as u64
}

// Readings lie in [10, 99) and print with 18 decimals, so each one is
// exactly 21 characters wide.
const SCALAR_LOW: f64 = 10.0;
const SCALAR_HIGH: f64 = 99.0;
const SCALAR_WIDTH: u64 = 21;
const SCALAR_SEPARATOR: &str = ", ";

/// Serialized length of a scalar batch holding `count` readings.
pub fn scalar_body_len(count: u64) -> u64 {
    match count {
        0 => 2,
        n => 2 + n * SCALAR_WIDTH + (n - 1) * SCALAR_SEPARATOR.len() as u64,
    }
}

/// Generates one interval's worth of sensor readings as a JSON array.
///
/// Empty batches are still produced (`[]`) so the send cadence stays fixed.
pub fn generate_scalar_batch(
    freq_hz: f64,
    interval_s: f64,
    rng: &mut SeededRng,
) -> Result<String, WorkloadError> {
    check_rate(freq_hz, interval_s)?;
    let count = scalar_count(freq_hz, interval_s);
    let values: Vec<String> = (0..count)
        .map(|_| {
            let v = SCALAR_LOW + (SCALAR_HIGH - SCALAR_LOW) * rng.random::<f64>();
            format!("{v:.18}")
        })
        .collect();
    Ok(format!("[{}]", values.join(SCALAR_SEPARATOR)))
}

/// Expected `(total input bytes, total payload bytes)` over a whole run.
///
/// Exact for constant distributions; otherwise per-item expectations are
/// rounded to whole bytes before multiplying by the item count.
pub fn workload_totals(spec: &WorkloadSpec) -> (u64, u64) {
    if spec.items == 0 {
        return (0, 0);
    }
    match spec.kind {
        WorkloadKind::Scalar => {
            let (f, i) = spec.scalar_rate().unwrap_or((0.0, 0.0));
            let per = scalar_body_len(scalar_count(f, i));
            (spec.items * per, spec.items * per)
        }
        _ => {
            let per_input = spec.input_bytes_per_item.mean().round_ties_even().max(0.0) as u64;
            let per_payload = spec.result_payload_bytes.mean().round_ties_even().max(0.0) as u64;
            (spec.items * per_input, spec.items * per_payload)
        }
    }
}

/// Drives one device through a workload.
///
/// Message ids interleave across devices (`idx · devices + device_index`) so
/// they are unique in a run and strictly increasing per source.
#[derive(Debug, Clone)]
pub struct WorkloadDriver {
    spec: WorkloadSpec,
    source: String,
    device_index: u64,
    devices: u64,
    rng: SeededRng,
    next_idx: u64,
}

impl WorkloadDriver {
    pub fn new(
        spec: WorkloadSpec,
        source: impl Into<String>,
        device_index: u64,
        devices: u64,
        rng: SeededRng,
    ) -> Result<Self, WorkloadError> {
        spec.validate()?;
        Ok(Self {
            spec,
            source: source.into(),
            device_index,
            devices: devices.max(1),
            rng,
            next_idx: 0,
        })
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn next_index(&self) -> u64 {
        self.next_idx
    }

    pub fn is_exhausted(&self) -> bool {
        self.next_idx >= self.spec.items
    }

    pub fn message_id(&self, idx: u64) -> MessageId {
        idx * self.devices + self.device_index
    }

    /// Runs item `idx`, which must be the next unprocessed item.
    ///
    /// The item starts at `clock.now()`; the returned message's `t1` is the
    /// completion instant stamped with the clock's edge skew.
    pub fn run_item(
        &mut self,
        idx: u64,
        clock: &Clock,
    ) -> Result<(ComputeRecord, Message), WorkloadError> {
        if idx >= self.spec.items {
            return Err(WorkloadError::ExhaustedWorkload {
                idx,
                items: self.spec.items,
            });
        }
        if idx != self.next_idx {
            return Err(WorkloadError::Invalid(format!(
                "items run sequentially: expected item {}, got {idx}",
                self.next_idx
            )));
        }
        let c_edge = self.draw("compute_ms", |s| &s.compute_ms)?;
        let (body, input_bytes, payload_bytes) = self.produce(idx)?;
        self.next_idx += 1;
        let message = Message {
            id: self.message_id(idx),
            source: self.source.clone(),
            payload_bytes,
            overhead_bytes: 0,
            body,
            t1: clock.edge_stamp(clock.now() + c_edge),
        };
        let record = ComputeRecord {
            item_index: idx,
            c_edge_ms: c_edge,
            payload_bytes,
            input_bytes,
        };
        Ok((record, message))
    }

    /// Prepares item `idx` as a raw-input upload for the cloud pipeline.
    ///
    /// No device compute happens; the message payload is the input size and
    /// `t1` is the upload start.
    pub fn next_upload(&mut self, idx: u64, clock: &Clock) -> Result<Message, WorkloadError> {
        if idx >= self.spec.items {
            return Err(WorkloadError::ExhaustedWorkload {
                idx,
                items: self.spec.items,
            });
        }
        let (body, input_bytes, _) = self.produce(idx)?;
        self.next_idx = idx + 1;
        Ok(Message {
            id: self.message_id(idx),
            source: self.source.clone(),
            payload_bytes: input_bytes,
            overhead_bytes: 0,
            body,
            t1: clock.edge_stamp(clock.now()),
        })
    }

    /// Draws the idle gap before the next item.
    pub fn next_gap(&mut self) -> Result<Millis, WorkloadError> {
        self.draw("inter_item_gap_ms", |s| &s.inter_item_gap_ms)
    }

    fn draw(
        &mut self,
        field: &'static str,
        pick: impl Fn(&WorkloadSpec) -> &Distribution,
    ) -> Result<Millis, WorkloadError> {
        pick(&self.spec)
            .sample_ms(&mut self.rng)
            .map(|v| v.max(0))
            .map_err(|source| WorkloadError::Distribution { field, source })
    }

    fn produce(&mut self, idx: u64) -> Result<(String, u64, u64), WorkloadError> {
        match self.spec.kind {
            WorkloadKind::Scalar => {
                let (f, i) = self.spec.scalar_rate()?;
                let body = generate_scalar_batch(f, i, &mut self.rng)?;
                let len = body.len() as u64;
                Ok((body, len, len))
            }
            kind => {
                let input = self.draw("input_bytes_per_item", |s| &s.input_bytes_per_item)? as u64;
                let payload =
                    self.draw("result_payload_bytes", |s| &s.result_payload_bytes)? as u64;
                let body = format!("{{\"item\":{idx},\"kind\":\"{}\"}}", kind.as_str());
                Ok((body, input, payload))
            }
        }
    }
}
