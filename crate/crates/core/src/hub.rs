//! Cloud ingestion hub and its storage write policies.
//!
//! The hub stamps `t2` on every arriving message and routes it to storage in
//! one of two ways:
//!
//! * **immediate**: one blob per message, written after a sampled write
//!   latency;
//! * **batched**: messages collect in a batch that flushes at the next window
//!   boundary or as soon as the batch reaches `chunk_bytes`, whichever comes
//!   first. The blob appears `holdback_s` after the flush.
//!
//! Windows tile time from route creation (`origin`) in steps of `window_s`.
//! A message arriving exactly on a boundary belongs to the batch closing
//! there, and a chunk-triggered flush does not move the window phase.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Distribution;
use crate::model::{secs_to_ms, Message, MessageId, Millis};
use crate::rng::SeededRng;

/// Smallest batching window the reference platform accepts.
pub const MIN_WINDOW_S: f64 = 60.0;
/// Smallest batching chunk the reference platform accepts (10 MB).
pub const MIN_CHUNK_BYTES: u64 = 10 * 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid hub policy: {0}")]
pub struct InvalidPolicy(pub String);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HubMode {
    #[default]
    Immediate,
    Batched,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HubPolicy {
    #[serde(default)]
    pub mode: HubMode,
    pub window_s: Option<f64>,
    pub chunk_bytes: Option<u64>,
    #[serde(default)]
    pub holdback_s: f64,
    /// Blob write latency in immediate mode.
    #[serde(default)]
    pub write_latency_ms: Distribution,
    /// Enforce the platform's minimum window and chunk sizes.
    #[serde(default)]
    pub platform_faithful: bool,
}

impl HubPolicy {
    pub fn validate(&self) -> Result<(), InvalidPolicy> {
        self.write_latency_ms
            .validate_non_negative()
            .map_err(|e| InvalidPolicy(format!("write_latency_ms: {e}")))?;
        if self.mode == HubMode::Immediate {
            return Ok(());
        }
        if self.window_s.is_none() && self.chunk_bytes.is_none() {
            return Err(InvalidPolicy(
                "batched mode needs window_s, chunk_bytes or both".into(),
            ));
        }
        if !(self.holdback_s.is_finite() && self.holdback_s >= 0.0) {
            return Err(InvalidPolicy(format!(
                "holdback_s must be >= 0, got {}",
                self.holdback_s
            )));
        }
        if let Some(w) = self.window_s {
            if !(w.is_finite() && secs_to_ms(w) > 0) {
                return Err(InvalidPolicy(format!("window_s must be positive, got {w}")));
            }
            if self.platform_faithful && w < MIN_WINDOW_S {
                return Err(InvalidPolicy(format!(
                    "window_s = {w} is below the platform minimum of {MIN_WINDOW_S} s"
                )));
            }
        }
        if let Some(c) = self.chunk_bytes {
            if c == 0 {
                return Err(InvalidPolicy("chunk_bytes must be positive".into()));
            }
            if self.platform_faithful && c < MIN_CHUNK_BYTES {
                return Err(InvalidPolicy(format!(
                    "chunk_bytes = {c} is below the platform minimum of {MIN_CHUNK_BYTES} bytes (10 MB)"
                )));
            }
        }
        Ok(())
    }

    pub fn window_ms(&self) -> Option<Millis> {
        self.window_s.map(secs_to_ms)
    }

    pub fn holdback_ms(&self) -> Millis {
        secs_to_ms(self.holdback_s)
    }
}

/// A message together with its hub enqueue time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enqueued {
    pub message: Message,
    pub t2: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HubRecord {
    pub id: MessageId,
    pub t2: Millis,
    /// Batch flush instant (batched mode only).
    pub flush_time: Option<Millis>,
    /// `t3 − t2`, known once the blob is written.
    pub residence_ms: Option<Millis>,
}

/// A pending blob: its flush instant, creation instant (`t3`) and contents
/// in `t2` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobWrite {
    pub flush_time: Millis,
    pub created_at: Millis,
    pub messages: Vec<Enqueued>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HubAction {
    /// Call [`Hub::close_window`] with this boundary once time reaches it.
    CloseWindowAt(Millis),
    /// A blob is ready to be created at `created_at`.
    Write(BlobWrite),
}

#[derive(Debug)]
struct OpenBatch {
    boundary: Option<Millis>,
    bytes: u64,
    messages: Vec<Enqueued>,
}

/// Hub state machine. The caller owns time: it feeds arrivals in time order
/// and calls [`Hub::close_window`] when a requested boundary is reached.
#[derive(Debug)]
pub struct Hub {
    policy: HubPolicy,
    origin: Millis,
    rng: SeededRng,
    open: Option<OpenBatch>,
    last_scheduled: Option<Millis>,
    records: BTreeMap<MessageId, HubRecord>,
}

impl Hub {
    pub fn new(policy: HubPolicy, origin: Millis, rng: SeededRng) -> Result<Self, InvalidPolicy> {
        policy.validate()?;
        Ok(Self {
            policy,
            origin,
            rng,
            open: None,
            last_scheduled: None,
            records: BTreeMap::new(),
        })
    }

    pub fn policy(&self) -> &HubPolicy {
        &self.policy
    }

    pub fn records(&self) -> &BTreeMap<MessageId, HubRecord> {
        &self.records
    }

    /// Boundary of the window a message enqueued at `t2` belongs to.
    ///
    /// The first window closes one full window after route creation; after
    /// that a message on a boundary joins the batch closing there.
    pub fn window_boundary(&self, t2: Millis) -> Option<Millis> {
        let w = self.policy.window_ms()?;
        let rel = (t2 - self.origin).max(0);
        let k = (rel + w - 1).div_euclid(w).max(1);
        Some(self.origin + k * w)
    }

    /// Stamps `t2 = arrival` and routes the message.
    pub fn ingest(&mut self, message: Message, arrival: Millis) -> (HubRecord, Vec<HubAction>) {
        let record = HubRecord {
            id: message.id,
            t2: arrival,
            flush_time: None,
            residence_ms: None,
        };
        self.records.insert(message.id, record);
        let item = Enqueued {
            message,
            t2: arrival,
        };
        let actions = match self.policy.mode {
            HubMode::Immediate => {
                vec![HubAction::Write(route_immediate(
                    item,
                    &self.policy,
                    &mut self.rng,
                ))]
            }
            HubMode::Batched => self.route_batched(item),
        };
        (record, actions)
    }

    fn route_batched(&mut self, item: Enqueued) -> Vec<HubAction> {
        let mut actions = Vec::new();
        let boundary = self.window_boundary(item.t2);
        // An arrival past the open batch's boundary means the caller did not
        // close that window; close it now so batches never straddle windows.
        if let (Some(open), Some(b)) = (&self.open, boundary) {
            if let Some(ob) = open.boundary {
                if ob < b {
                    actions.extend(self.close_window(ob).map(HubAction::Write));
                }
            }
        }
        let bytes = item.message.payload_bytes;
        let t2 = item.t2;
        let batch = self.open.get_or_insert_with(|| OpenBatch {
            boundary,
            bytes: 0,
            messages: Vec::new(),
        });
        batch.bytes += bytes;
        batch.messages.push(item);
        if let Some(b) = boundary {
            if self.last_scheduled != Some(b) {
                self.last_scheduled = Some(b);
                actions.push(HubAction::CloseWindowAt(b));
            }
        }
        if let Some(chunk) = self.policy.chunk_bytes {
            if self.open.as_ref().is_some_and(|o| o.bytes >= chunk) {
                actions.extend(self.flush(t2).map(HubAction::Write));
            }
        }
        actions
    }

    /// Flushes the open batch if it belongs to the window closing at
    /// `boundary`.
    pub fn close_window(&mut self, boundary: Millis) -> Option<BlobWrite> {
        match &self.open {
            Some(open) if open.boundary == Some(boundary) => self.flush(boundary),
            _ => None,
        }
    }

    /// Flushes whatever is still open at `at` (end of run).
    pub fn drain(&mut self, at: Millis) -> Option<BlobWrite> {
        self.flush(at)
    }

    pub fn has_open_batch(&self) -> bool {
        self.open.is_some()
    }

    fn flush(&mut self, at: Millis) -> Option<BlobWrite> {
        let batch = self.open.take()?;
        if batch.messages.is_empty() {
            return None;
        }
        let created_at = at + self.policy.holdback_ms();
        for m in &batch.messages {
            if let Some(r) = self.records.get_mut(&m.message.id) {
                r.flush_time = Some(at);
            }
        }
        Some(BlobWrite {
            flush_time: at,
            created_at,
            messages: batch.messages,
        })
    }

    /// Records residence times once a blob is created.
    pub fn mark_written(&mut self, write: &BlobWrite) {
        for m in &write.messages {
            if let Some(r) = self.records.get_mut(&m.message.id) {
                r.residence_ms = Some(write.created_at - m.t2);
            }
        }
    }
}

/// One blob per message, created `write_latency_ms` after enqueue.
pub fn route_immediate(item: Enqueued, policy: &HubPolicy, rng: &mut SeededRng) -> BlobWrite {
    let latency = policy
        .write_latency_ms
        .sample_ms(rng)
        .expect("policy validated")
        .max(0);
    BlobWrite {
        flush_time: item.t2,
        created_at: item.t2 + latency,
        messages: vec![item],
    }
}

/// Batches a time-ordered arrival sequence offline and returns the blobs in
/// flush order. The route is created at `origin`.
pub fn route_batched(
    arrivals: impl IntoIterator<Item = Enqueued>,
    policy: &HubPolicy,
    origin: Millis,
) -> Result<Vec<BlobWrite>, InvalidPolicy> {
    if policy.mode != HubMode::Batched {
        return Err(InvalidPolicy("route_batched needs a batched policy".into()));
    }
    let mut hub = Hub::new(policy.clone(), origin, SeededRng::new(0))?;
    let mut writes = Vec::new();
    let mut last = origin;
    for item in arrivals {
        last = last.max(item.t2);
        let (_, actions) = hub.ingest(item.message, item.t2);
        writes.extend(actions.into_iter().filter_map(|a| match a {
            HubAction::Write(w) => Some(w),
            HubAction::CloseWindowAt(_) => None,
        }));
    }
    if let Some(b) = hub.open.as_ref().and_then(|o| o.boundary) {
        writes.extend(hub.close_window(b));
    }
    writes.extend(hub.drain(last));
    Ok(writes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(id: u64, payload: u64) -> Message {
        Message {
            id,
            source: "device-0".into(),
            payload_bytes: payload,
            overhead_bytes: 0,
            body: String::new(),
            t1: 0,
        }
    }

    fn batched(window_s: Option<f64>, chunk: Option<u64>, holdback_s: f64) -> HubPolicy {
        HubPolicy {
            mode: HubMode::Batched,
            window_s,
            chunk_bytes: chunk,
            holdback_s,
            ..HubPolicy::default()
        }
    }

    fn immediate(latency: f64) -> HubPolicy {
        HubPolicy {
            write_latency_ms: Distribution::Constant(latency),
            ..HubPolicy::default()
        }
    }

    #[test]
    fn ingest_stamps_arrival() {
        let mut hub = Hub::new(immediate(0.0), 0, SeededRng::new(1)).unwrap();
        let (r, _) = hub.ingest(msg(1, 10), 1000);
        assert_eq!(r.t2, 1000);
        let (r2, _) = hub.ingest(msg(2, 10), 1005);
        assert!(r.t2 < r2.t2);
    }

    #[test]
    fn skewed_t1_does_not_touch_t2() {
        let mut hub = Hub::new(immediate(0.0), 0, SeededRng::new(1)).unwrap();
        let mut m = msg(1, 10);
        m.t1 = 950 + 50;
        let (r, _) = hub.ingest(m, 1000);
        assert_eq!(r.t2, 1000);
    }

    #[test]
    fn immediate_write_latency() {
        let mut rng = SeededRng::new(1);
        let item = |t2| Enqueued {
            message: msg(1, 1),
            t2,
        };
        assert_eq!(
            route_immediate(item(1000), &immediate(0.0), &mut rng).created_at,
            1000
        );
        assert_eq!(
            route_immediate(item(1000), &immediate(120.0), &mut rng).created_at,
            1120
        );
    }

    #[test]
    fn immediate_mode_one_blob_per_message() {
        let mut hub = Hub::new(immediate(5.0), 0, SeededRng::new(1)).unwrap();
        let writes: usize = (0..500)
            .map(|i| hub.ingest(msg(i, 752), i as Millis * 1000).1.len())
            .sum();
        assert_eq!(writes, 500);
    }

    #[test]
    fn lone_message_waits_for_boundary() {
        let writes = route_batched(
            [Enqueued {
                message: msg(0, 10),
                t2: 0,
            }],
            &batched(Some(60.0), None, 0.0),
            0,
        )
        .unwrap();
        assert_eq!(writes.len(), 1);
        assert_eq!(writes[0].created_at, 60_000);
    }

    #[test]
    fn boundary_tie_joins_closing_batch() {
        let hub = Hub::new(batched(Some(60.0), None, 0.0), 0, SeededRng::new(1)).unwrap();
        assert_eq!(hub.window_boundary(0), Some(60_000));
        assert_eq!(hub.window_boundary(1), Some(60_000));
        assert_eq!(hub.window_boundary(60_000), Some(60_000));
        assert_eq!(hub.window_boundary(60_001), Some(120_000));
        let hub = Hub::new(batched(Some(60.0), None, 0.0), 5_000, SeededRng::new(1)).unwrap();
        assert_eq!(hub.window_boundary(65_000), Some(65_000));
    }

    #[test]
    fn holdback_is_added_after_flush() {
        let writes = route_batched(
            (0..3).map(|i| Enqueued {
                message: msg(i, 1),
                t2: 10_000 * i as Millis,
            }),
            &batched(Some(60.0), None, 60.0),
            0,
        )
        .unwrap();
        assert_eq!(writes.len(), 1);
        assert_eq!(writes[0].flush_time, 60_000);
        assert_eq!(writes[0].created_at, 120_000);
        let t2s: Vec<_> = writes[0].messages.iter().map(|m| m.t2).collect();
        assert_eq!(t2s, [0, 10_000, 20_000]);
    }

    #[test]
    fn chunk_trigger_flushes_mid_window() {
        let chunk = MIN_CHUNK_BYTES;
        let policy = batched(Some(60.0), Some(chunk), 0.0);
        let mut hub = Hub::new(policy, 0, SeededRng::new(1)).unwrap();
        let (_, a) = hub.ingest(msg(0, chunk / 2), 1_000);
        assert_eq!(a, vec![HubAction::CloseWindowAt(60_000)]);
        let (_, a) = hub.ingest(msg(1, chunk / 2), 2_000);
        let [HubAction::Write(w)] = a.as_slice() else {
            panic!("expected one write, got {a:?}")
        };
        assert_eq!(w.flush_time, 2_000);
        assert_eq!(w.messages.len(), 2);
        // New batch in the same window: no duplicate close request, and the
        // window still closes at 60 s.
        let (_, a) = hub.ingest(msg(2, 1), 3_000);
        assert!(a.is_empty());
        let w = hub.close_window(60_000).unwrap();
        assert_eq!(w.flush_time, 60_000);
        assert_eq!(w.messages.len(), 1);
    }

    #[test]
    fn chunk_only_policy_drains_at_end() {
        let writes = route_batched(
            (0..5).map(|i| Enqueued {
                message: msg(i, 4),
                t2: i as Millis,
            }),
            &batched(None, Some(8), 0.0),
            0,
        )
        .unwrap();
        let sizes: Vec<_> = writes.iter().map(|w| w.messages.len()).collect();
        assert_eq!(sizes, [2, 2, 1]);
    }

    #[test]
    fn validation() {
        assert!(batched(None, None, 0.0).validate().is_err());
        let mut p = batched(Some(30.0), None, 0.0);
        assert!(p.validate().is_ok());
        p.platform_faithful = true;
        let err = p.validate().unwrap_err();
        assert!(err.0.contains("60"), "{err}");
        let mut p = batched(Some(60.0), Some(1024), 0.0);
        p.platform_faithful = true;
        assert!(p.validate().is_err());
        assert!(batched(Some(60.0), None, -1.0).validate().is_err());
    }
}
