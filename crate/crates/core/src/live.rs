//! Wall-clock execution of a scenario.
//!
//! Each device runs on its own thread and does real (busy-wait) work for the
//! sampled compute time; a single hub thread holds messages until their
//! modeled arrival instant, then routes them exactly as the virtual run does.
//! Timestamps come from a scaled wall clock, so results are approximate and
//! vary between runs. Process CPU and memory are sampled once per second
//! from `/proc/self` where available.

use std::collections::BTreeMap;
use std::fs;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::clock::{Clock, EventQueue};
use crate::cloud::{run_cloud_item, CloudFunctionProfile, CloudOutcome};
use crate::config::{Pipeline, ScenarioConfig};
use crate::hub::{BlobWrite, Enqueued, Hub, HubAction, InvalidPolicy};
use crate::model::{Message, MessageId, Millis};
use crate::network::{ByteLedger, Delivery, Link};
use crate::rng::SeededRng;
use crate::sim::{MessageTrace, SimOutput};
use crate::storage::{BlobStore, StorageError};
use crate::workloads::{WorkloadDriver, WorkloadError, WorkloadKind};

#[derive(Debug, Error)]
pub enum LiveError {
    #[error("scenario `{0}` is a cloud pipeline without a cloud function")]
    MissingCloudFunction(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("hub policy: {}", .0 .0)]
    Hub(#[from] InvalidPolicy),
    #[error("{0} thread panicked")]
    WorkerPanicked(&'static str),
}

/// Hook that performs the per-item work on a device.
pub trait ItemProcessor: Send + Sync {
    /// Processes item `index`; `budget` is the sampled compute time.
    fn process(&self, kind: WorkloadKind, index: u64, budget: Duration);
}

/// Spins on the CPU for exactly the sampled compute time.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpinProcessor;

impl ItemProcessor for SpinProcessor {
    fn process(&self, _kind: WorkloadKind, _index: u64, budget: Duration) {
        let end = Instant::now() + budget;
        let mut x = 0u64;
        while Instant::now() < end {
            x = std::hint::black_box(x.wrapping_mul(6364136223846793005).wrapping_add(1));
        }
    }
}

#[derive(Clone)]
pub struct LiveOptions {
    /// Real milliseconds per pipeline millisecond.
    pub time_scale: f64,
    pub processor: Arc<dyn ItemProcessor>,
    pub sample_resources: bool,
}

impl Default for LiveOptions {
    fn default() -> Self {
        Self {
            time_scale: 1.0,
            processor: Arc::new(SpinProcessor),
            sample_resources: true,
        }
    }
}

enum HubInput {
    Arrive(Message, Millis),
    CloudResult(Enqueued, Millis),
}

enum HubEvent {
    Arrive(Message),
    CloseWindow(Millis),
    Write(BlobWrite),
    CloudResult(Enqueued),
}

type Traces = Arc<Mutex<BTreeMap<MessageId, MessageTrace>>>;

fn sleep_until(clock: &Clock, t: Millis) {
    if let Some(at) = clock.instant_of(t) {
        let now = Instant::now();
        if at > now {
            thread::sleep(at - now);
        }
    }
}

struct DeviceResult {
    ledger: ByteLedger,
    dropped: u64,
}

struct DeviceStreams {
    driver: WorkloadDriver,
    link_rng: SeededRng,
    cloud_rng: SeededRng,
}

fn device_worker(
    config: &ScenarioConfig,
    streams: DeviceStreams,
    clock: Clock,
    opts: &LiveOptions,
    traces: &Traces,
    tx: Sender<HubInput>,
) -> Result<DeviceResult, LiveError> {
    let DeviceStreams {
        mut driver,
        mut link_rng,
        mut cloud_rng,
    } = streams;
    let mut link = Link::new(config.link.clone());
    let mut stamp_clock = Clock::new_virtual(config.edge_clock_skew_ms);
    let mut dropped = 0;
    let kind = driver.spec().kind;
    sleep_until(&clock, driver.spec().warmup_ms());
    while !driver.is_exhausted() {
        let start = clock.now().max(stamp_clock.now());
        stamp_clock.advance(start).expect("monotone");
        let idx = driver.next_index();
        let next = match (&config.pipeline, &config.cloud_function) {
            (Pipeline::Edge, _) => {
                let (record, mut msg) = driver.run_item(idx, &stamp_clock)?;
                opts.processor
                    .process(kind, idx, clock.real_duration(record.c_edge_ms));
                let send = clock.now().max(start);
                msg.t1 = clock.edge_stamp(send);
                traces.lock().expect("trace lock").insert(
                    msg.id,
                    MessageTrace {
                        id: msg.id,
                        source: msg.source.clone(),
                        c_edge_ms: send - start,
                        t1: msg.t1,
                        t2: None,
                        t3: None,
                        payload_bytes: msg.payload_bytes,
                    },
                );
                link.model().frame(&mut msg);
                match link.deliver(&msg, send, &mut link_rng) {
                    Delivery::Arrived(at) => {
                        let _ = tx.send(HubInput::Arrive(msg, at));
                    }
                    Delivery::Dropped => dropped += 1,
                }
                let gap = if driver.is_exhausted() {
                    0
                } else {
                    driver.next_gap()?
                };
                match driver.spec().scalar_interval_ms() {
                    Some(interval) => (start + interval).max(send) + gap,
                    None => send + gap,
                }
            }
            (Pipeline::Cloud, Some(profile)) => {
                let mut upload = driver.next_upload(idx, &stamp_clock)?;
                let result_bytes = cloud_result_bytes(&driver, &upload, &mut cloud_rng)?;
                let outcome = run_cloud_item(
                    &mut upload,
                    profile,
                    &mut link,
                    &stamp_clock,
                    &mut link_rng,
                    &mut cloud_rng,
                );
                cloud_step(
                    outcome,
                    upload,
                    result_bytes,
                    profile,
                    start,
                    traces,
                    &tx,
                    &mut dropped,
                )
            }
            (Pipeline::Cloud, None) => {
                return Err(LiveError::MissingCloudFunction(config.name.clone()))
            }
        };
        if !driver.is_exhausted() {
            sleep_until(&clock, next);
        }
    }
    Ok(DeviceResult {
        ledger: link.into_ledger(),
        dropped,
    })
}

fn cloud_result_bytes(
    driver: &WorkloadDriver,
    upload: &Message,
    rng: &mut SeededRng,
) -> Result<u64, LiveError> {
    if driver.spec().kind == WorkloadKind::Scalar {
        return Ok(upload.payload_bytes);
    }
    let bytes = driver
        .spec()
        .result_payload_bytes
        .sample_ms(rng)
        .map_err(|source| WorkloadError::Distribution {
            field: "result_payload_bytes",
            source,
        })?;
    Ok(bytes.max(0) as u64)
}

#[allow(clippy::too_many_arguments)]
fn cloud_step(
    outcome: CloudOutcome,
    upload: Message,
    result_bytes: u64,
    profile: &CloudFunctionProfile,
    start: Millis,
    traces: &Traces,
    tx: &Sender<HubInput>,
    dropped: &mut u64,
) -> Millis {
    let mut trace = MessageTrace {
        id: upload.id,
        source: upload.source.clone(),
        c_edge_ms: 0,
        t1: upload.t1,
        t2: None,
        t3: None,
        payload_bytes: upload.payload_bytes,
    };
    match outcome {
        CloudOutcome::Completed(timing) => {
            trace.t2 = Some(timing.t2);
            traces.lock().expect("trace lock").insert(trace.id, trace);
            let result = Message {
                payload_bytes: result_bytes,
                overhead_bytes: 0,
                ..upload
            };
            let item = Enqueued {
                message: result,
                t2: timing.t2,
            };
            let _ = tx.send(HubInput::CloudResult(item, timing.t3));
            (timing.t2 + profile.gap_ms()).max(timing.t3)
        }
        CloudOutcome::Dropped => {
            traces.lock().expect("trace lock").insert(trace.id, trace);
            *dropped += 1;
            start + profile.gap_ms()
        }
    }
}

struct HubResult {
    store: BlobStore,
    records: BTreeMap<MessageId, crate::hub::HubRecord>,
    end_time: Millis,
}

fn hub_worker(
    config: &ScenarioConfig,
    mut hub: Option<Hub>,
    clock: Clock,
    traces: &Traces,
    rx: Receiver<HubInput>,
) -> Result<HubResult, LiveError> {
    let mut store = BlobStore::new(config.storage.envelope_bytes);
    let route = config.route();
    let mut queue: EventQueue<HubEvent> = EventQueue::new();
    let mut closed = false;
    let mut end_time = 0;
    loop {
        while let Some(t) = queue.peek_time() {
            if t > clock.now() {
                break;
            }
            let (t, event) = queue.pop().expect("peeked");
            end_time = end_time.max(t);
            match event {
                HubEvent::Arrive(msg) => {
                    let Some(hub) = hub.as_mut() else { continue };
                    let id = msg.id;
                    let (record, actions) = hub.ingest(msg, t);
                    if let Some(tr) = traces.lock().expect("trace lock").get_mut(&id) {
                        tr.t2 = Some(record.t2);
                    }
                    for action in actions {
                        match action {
                            HubAction::CloseWindowAt(b) => {
                                queue.schedule(b, 1, HubEvent::CloseWindow(b))
                            }
                            HubAction::Write(w) => {
                                queue.schedule(w.created_at, 2, HubEvent::Write(w))
                            }
                        }
                    }
                }
                HubEvent::CloseWindow(b) => {
                    if let Some(w) = hub.as_mut().and_then(|h| h.close_window(b)) {
                        queue.schedule(w.created_at, 2, HubEvent::Write(w));
                    }
                }
                HubEvent::Write(w) => {
                    store.append_to_route(&route, &w.messages, t)?;
                    let mut traces = traces.lock().expect("trace lock");
                    for m in &w.messages {
                        if let Some(tr) = traces.get_mut(&m.message.id) {
                            tr.t3 = Some(t);
                        }
                    }
                    if let Some(hub) = hub.as_mut() {
                        hub.mark_written(&w);
                    }
                }
                HubEvent::CloudResult(item) => {
                    let id = item.message.id;
                    store.append_to_route(&route, std::slice::from_ref(&item), t)?;
                    if let Some(tr) = traces.lock().expect("trace lock").get_mut(&id) {
                        tr.t3 = Some(t);
                    }
                }
            }
        }
        if closed {
            match queue.peek_time() {
                Some(t) => sleep_until(&clock, t),
                None => match hub
                    .as_mut()
                    .and_then(|h| h.drain(end_time.max(clock.now())))
                {
                    Some(w) => queue.schedule(w.created_at, 2, HubEvent::Write(w)),
                    None => break,
                },
            }
            continue;
        }
        let input = match queue.peek_time().and_then(|t| clock.instant_of(t)) {
            Some(at) => match rx.recv_timeout(at.saturating_duration_since(Instant::now())) {
                Ok(input) => Some(input),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => {
                    closed = true;
                    None
                }
            },
            None => match rx.recv() {
                Ok(input) => Some(input),
                Err(_) => {
                    closed = true;
                    None
                }
            },
        };
        match input {
            Some(HubInput::Arrive(msg, at)) => queue.schedule(at, 0, HubEvent::Arrive(msg)),
            Some(HubInput::CloudResult(item, at)) => {
                queue.schedule(at, 2, HubEvent::CloudResult(item))
            }
            None => {}
        }
    }
    Ok(HubResult {
        store,
        records: hub.map(|h| h.records().clone()).unwrap_or_default(),
        end_time,
    })
}

/// Reads `(cpu ticks, resident MB)` for this process, if `/proc` exists.
fn proc_snapshot() -> Option<(u64, f64)> {
    let stat = fs::read_to_string("/proc/self/stat").ok()?;
    let fields: Vec<&str> = stat.rsplit_once(')')?.1.split_whitespace().collect();
    let ticks = fields.get(11)?.parse::<u64>().ok()? + fields.get(12)?.parse::<u64>().ok()?;
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let rss_kb: f64 = status
        .lines()
        .find_map(|l| l.strip_prefix("VmRSS:"))?
        .trim()
        .trim_end_matches("kB")
        .trim()
        .parse()
        .ok()?;
    Some((ticks, rss_kb / 1024.0))
}

/// Kernel clock ticks per second; 100 on mainstream Linux builds.
const TICKS_PER_SEC: f64 = 100.0;

fn sampler(stop: &AtomicBool) -> Vec<(f64, f64)> {
    let mut samples = Vec::new();
    let Some(mut last) = proc_snapshot() else {
        return samples;
    };
    let mut last_at = Instant::now();
    while !stop.load(Ordering::Relaxed) {
        thread::sleep(Duration::from_millis(50));
        if last_at.elapsed() < Duration::from_secs(1) {
            continue;
        }
        let Some(now) = proc_snapshot() else { break };
        let secs = last_at.elapsed().as_secs_f64();
        let cpu = (now.0.saturating_sub(last.0)) as f64 / TICKS_PER_SEC / secs * 100.0;
        samples.push((cpu, now.1));
        last = now;
        last_at = Instant::now();
    }
    if samples.is_empty() {
        if let Some(now) = proc_snapshot() {
            let secs = last_at.elapsed().as_secs_f64().max(1e-3);
            let cpu = (now.0.saturating_sub(last.0)) as f64 / TICKS_PER_SEC / secs * 100.0;
            samples.push((cpu, now.1));
        }
    }
    samples
}

fn fallback_seed() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

/// Runs `config` against the wall clock. Resource samples, when present,
/// are measured from this process.
pub fn run_live(config: &ScenarioConfig, opts: &LiveOptions) -> Result<SimOutput, LiveError> {
    let seed = config.seed.unwrap_or_else(fallback_seed);
    if config.pipeline == Pipeline::Cloud && config.cloud_function.is_none() {
        return Err(LiveError::MissingCloudFunction(config.name.clone()));
    }
    let hub = match config.pipeline {
        Pipeline::Edge => Some(Hub::new(
            config.hub.clone(),
            0,
            SeededRng::for_component(seed, "hub"),
        )?),
        Pipeline::Cloud => None,
    };
    let n = u64::from(config.devices);
    let mut drivers = Vec::new();
    for i in 0..n {
        let label = |part: &str| format!("device-{i}/{part}");
        drivers.push(DeviceStreams {
            driver: WorkloadDriver::new(
                config.workload.clone(),
                format!("device-{i}"),
                i,
                n,
                SeededRng::for_component(seed, &label("workload")),
            )?,
            link_rng: SeededRng::for_component(seed, &label("link")),
            cloud_rng: SeededRng::for_component(seed, &label("cloud")),
        });
    }
    let clock = Clock::new_wall_scaled(config.edge_clock_skew_ms, opts.time_scale);
    let traces: Traces = Arc::default();
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel();

    thread::scope(|scope| {
        let sampler_handle = opts
            .sample_resources
            .then(|| scope.spawn(|| sampler(&stop)));
        let hub_handle = scope.spawn(|| hub_worker(config, hub, clock, &traces, rx));
        let device_handles: Vec<_> = drivers
            .into_iter()
            .map(|streams| {
                let tx = tx.clone();
                let traces = &traces;
                scope.spawn(move || device_worker(config, streams, clock, opts, traces, tx))
            })
            .collect();
        drop(tx);

        let mut ledger = ByteLedger::default();
        let mut dropped = 0;
        let mut first_err = None;
        for h in device_handles {
            match h.join() {
                Ok(Ok(r)) => {
                    ledger.merge(&r.ledger);
                    dropped += r.dropped;
                }
                Ok(Err(e)) => {
                    first_err.get_or_insert(e);
                }
                Err(_) => {
                    first_err.get_or_insert(LiveError::WorkerPanicked("device"));
                }
            }
        }
        let hub_result = hub_handle
            .join()
            .map_err(|_| LiveError::WorkerPanicked("hub"))?;
        stop.store(true, Ordering::Relaxed);
        let samples = sampler_handle
            .map(|h| h.join().map_err(|_| LiveError::WorkerPanicked("sampler")))
            .transpose()?
            .unwrap_or_default();
        if let Some(e) = first_err {
            return Err(e);
        }
        let hub_result = hub_result?;
        let traces = std::mem::take(&mut *traces.lock().expect("trace lock"));
        Ok(SimOutput {
            traces,
            ledger,
            store: hub_result.store,
            hub_records: hub_result.records,
            resource_samples: samples,
            dropped,
            end_time: hub_result.end_time.max(clock.now()),
        })
    })
}
