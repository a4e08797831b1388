//! Cloud-only pipeline: the device uploads raw input, the upload triggers a
//! function, and the function writes the result blob.
//!
//! There is no device compute in this pipeline, so `c_edge` is 0 and the
//! end-to-end latency reduces to `t3 − t1`, which splits exactly into
//! upload + trigger overhead + execution + result write.

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::dist::Distribution;
use crate::model::{secs_to_ms, Message, Millis, TimestampRecord};
use crate::network::{Delivery, Link, LinkModel};
use crate::rng::SeededRng;
use crate::workloads::{workload_totals, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudFunctionProfile {
    /// Trigger delay plus runtime and library load, lumped together.
    pub trigger_overhead_ms: Distribution,
    pub exec_ms: Distribution,
    #[serde(default)]
    pub result_write_ms: Distribution,
    pub memory_mb: u32,
    /// Pause after an upload completes before the next one starts.
    #[serde(default)]
    pub inter_upload_gap_s: f64,
}

impl CloudFunctionProfile {
    pub fn validate(&self) -> Result<(), String> {
        for (field, d) in [
            ("trigger_overhead_ms", &self.trigger_overhead_ms),
            ("exec_ms", &self.exec_ms),
            ("result_write_ms", &self.result_write_ms),
        ] {
            d.validate_non_negative()
                .map_err(|e| format!("{field}: {e}"))?;
        }
        if !(self.inter_upload_gap_s.is_finite() && self.inter_upload_gap_s >= 0.0) {
            return Err(format!(
                "inter_upload_gap_s must be >= 0, got {}",
                self.inter_upload_gap_s
            ));
        }
        Ok(())
    }

    pub fn gap_ms(&self) -> Millis {
        secs_to_ms(self.inter_upload_gap_s)
    }
}

/// Phase timings of one cloud item. `t2` is upload completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudItemTiming {
    pub t1: Millis,
    pub upload_ms: Millis,
    pub trigger_ms: Millis,
    pub exec_ms: Millis,
    pub write_ms: Millis,
    pub t2: Millis,
    pub t3: Millis,
}

impl CloudItemTiming {
    pub fn record(&self) -> TimestampRecord {
        TimestampRecord {
            t1: Some(self.t1),
            t2: Some(self.t2),
            t3: Some(self.t3),
            c_edge: 0,
        }
    }

    pub fn e2e_ms(&self) -> Millis {
        self.t3 - self.t1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudOutcome {
    Completed(CloudItemTiming),
    Dropped,
}

/// Runs one upload-triggered function invocation starting at `clock.now()`.
///
/// `upload` is the raw-input message from
/// [`WorkloadDriver::next_upload`](crate::workloads::WorkloadDriver::next_upload);
/// its framing is applied here from the link model.
pub fn run_cloud_item(
    upload: &mut Message,
    profile: &CloudFunctionProfile,
    link: &mut Link,
    clock: &Clock,
    link_rng: &mut SeededRng,
    function_rng: &mut SeededRng,
) -> CloudOutcome {
    let start = clock.now();
    link.model().clone().frame(upload);
    let t2 = match link.deliver(upload, start, link_rng) {
        Delivery::Arrived(t) => t,
        Delivery::Dropped => return CloudOutcome::Dropped,
    };
    let draw = |d: &Distribution, rng: &mut SeededRng| d.sample_ms(rng).expect("validated").max(0);
    let trigger_ms = draw(&profile.trigger_overhead_ms, function_rng);
    let exec_ms = draw(&profile.exec_ms, function_rng);
    let write_ms = draw(&profile.result_write_ms, function_rng);
    CloudOutcome::Completed(CloudItemTiming {
        t1: upload.t1,
        upload_ms: t2 - start,
        trigger_ms,
        exec_ms,
        write_ms,
        t2,
        t3: t2 + trigger_ms + exec_ms + write_ms,
    })
}

/// Expected bytes a cloud run puts on the device link: every raw input plus
/// its framing. Results are written inside the cloud and never cross it.
pub fn cloud_bandwidth(spec: &WorkloadSpec, link: &LinkModel) -> u64 {
    let (input, _) = workload_totals(spec);
    input + spec.items * link.per_message_overhead_bytes
}
