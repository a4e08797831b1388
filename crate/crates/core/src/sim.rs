//! Virtual-time event loop for one scenario.
//!
//! Same-instant events run in a fixed order: hub arrivals, then window
//! closes, then blob writes, then device activity. An arrival exactly on a
//! window boundary therefore joins the batch that closes there.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::clock::{Clock, ClockError, EventQueue};
use crate::cloud::{run_cloud_item, CloudFunctionProfile, CloudOutcome};
use crate::config::{Pipeline, ScenarioConfig};
use crate::hub::{BlobWrite, Enqueued, Hub, HubAction, HubRecord, InvalidPolicy};
use crate::model::{Message, MessageId, Millis, TimestampRecord};
use crate::network::{ByteLedger, Delivery, Link};
use crate::rng::SeededRng;
use crate::storage::{BlobStore, StorageError};
use crate::workloads::{WorkloadDriver, WorkloadError, WorkloadKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario `{0}` has no seed")]
    MissingSeed(String),
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("hub policy: {}", .0 .0)]
    Hub(#[from] InvalidPolicy),
    #[error("scenario `{0}` is a cloud pipeline without a cloud function")]
    MissingCloudFunction(String),
}

/// Everything known about one emitted message at the end of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageTrace {
    pub id: MessageId,
    pub source: String,
    pub c_edge_ms: Millis,
    pub t1: Millis,
    pub t2: Option<Millis>,
    pub t3: Option<Millis>,
    pub payload_bytes: u64,
}

impl MessageTrace {
    pub fn timestamps(&self) -> TimestampRecord {
        TimestampRecord {
            t1: Some(self.t1),
            t2: self.t2,
            t3: self.t3,
            c_edge: self.c_edge_ms,
        }
    }
}

#[derive(Debug)]
pub struct SimOutput {
    pub traces: BTreeMap<MessageId, MessageTrace>,
    pub ledger: ByteLedger,
    pub store: BlobStore,
    pub hub_records: BTreeMap<MessageId, HubRecord>,
    /// One modeled `(cpu %, ram MB)` reading per processed item.
    pub resource_samples: Vec<(f64, f64)>,
    pub dropped: u64,
    pub end_time: Millis,
}

const ARRIVE: u8 = 0;
const CLOSE: u8 = 1;
const WRITE: u8 = 2;
const DEVICE: u8 = 3;

#[derive(Debug)]
enum Event {
    ItemStart(usize),
    Emit(usize, Message),
    Arrive(Message),
    CloseWindow(Millis),
    Write(BlobWrite),
    Upload(usize),
    CloudResult(Enqueued),
}

struct Device {
    driver: WorkloadDriver,
    link_rng: SeededRng,
    cloud_rng: SeededRng,
    resource_rng: SeededRng,
}

struct Sim<'a> {
    config: &'a ScenarioConfig,
    clock: Clock,
    queue: EventQueue<Event>,
    devices: Vec<Device>,
    link: Link,
    store: BlobStore,
    route: String,
    traces: BTreeMap<MessageId, MessageTrace>,
    samples: Vec<(f64, f64)>,
    dropped: u64,
}

/// Runs `config` to completion in virtual time.
pub fn simulate(config: &ScenarioConfig) -> Result<SimOutput, SimError> {
    let seed = config
        .seed
        .ok_or_else(|| SimError::MissingSeed(config.name.clone()))?;
    let n = config.devices as u64;
    let devices = (0..n)
        .map(|i| {
            let label = |part: &str| format!("device-{i}/{part}");
            Ok(Device {
                driver: WorkloadDriver::new(
                    config.workload.clone(),
                    format!("device-{i}"),
                    i,
                    n,
                    SeededRng::for_component(seed, &label("workload")),
                )?,
                link_rng: SeededRng::for_component(seed, &label("link")),
                cloud_rng: SeededRng::for_component(seed, &label("cloud")),
                resource_rng: SeededRng::for_component(seed, &label("resources")),
            })
        })
        .collect::<Result<Vec<_>, WorkloadError>>()?;
    let mut sim = Sim {
        config,
        clock: Clock::new_virtual(config.edge_clock_skew_ms),
        queue: EventQueue::new(),
        devices,
        link: Link::new(config.link.clone()),
        store: BlobStore::new(config.storage.envelope_bytes),
        route: config.route(),
        traces: BTreeMap::new(),
        samples: Vec::new(),
        dropped: 0,
    };
    let start = config.workload.warmup_ms();
    let hub_records = match config.pipeline {
        Pipeline::Edge => {
            let hub = Hub::new(config.hub.clone(), 0, SeededRng::for_component(seed, "hub"))?;
            for d in 0..sim.devices.len() {
                sim.queue.schedule(start, DEVICE, Event::ItemStart(d));
            }
            sim.run_edge(hub)?
        }
        Pipeline::Cloud => {
            let profile = config
                .cloud_function
                .clone()
                .ok_or_else(|| SimError::MissingCloudFunction(config.name.clone()))?;
            for d in 0..sim.devices.len() {
                sim.queue.schedule(start, DEVICE, Event::Upload(d));
            }
            sim.run_cloud(&profile)?;
            BTreeMap::new()
        }
    };
    Ok(SimOutput {
        end_time: sim.clock.now(),
        traces: sim.traces,
        ledger: sim.link.into_ledger(),
        store: sim.store,
        hub_records,
        resource_samples: sim.samples,
        dropped: sim.dropped,
    })
}

impl Sim<'_> {
    fn sample_resources(&mut self, device: usize) {
        if let Some(profile) = &self.config.resources {
            let s = profile.sample(&mut self.devices[device].resource_rng);
            self.samples.push(s);
        }
    }

    fn run_edge(&mut self, mut hub: Hub) -> Result<BTreeMap<MessageId, HubRecord>, SimError> {
        loop {
            while let Some((t, event)) = self.queue.pop() {
                self.clock.advance(t)?;
                match event {
                    Event::ItemStart(d) => self.item_start(d, t)?,
                    Event::Emit(d, mut msg) => {
                        self.link.model().frame(&mut msg);
                        match self.link.deliver(&msg, t, &mut self.devices[d].link_rng) {
                            Delivery::Arrived(at) => {
                                self.queue.schedule(at, ARRIVE, Event::Arrive(msg))
                            }
                            Delivery::Dropped => self.dropped += 1,
                        }
                    }
                    Event::Arrive(msg) => {
                        let id = msg.id;
                        let (record, actions) = hub.ingest(msg, t);
                        if let Some(trace) = self.traces.get_mut(&id) {
                            trace.t2 = Some(record.t2);
                        }
                        for action in actions {
                            match action {
                                HubAction::CloseWindowAt(b) => {
                                    self.queue.schedule(b, CLOSE, Event::CloseWindow(b))
                                }
                                HubAction::Write(w) => {
                                    self.queue.schedule(w.created_at, WRITE, Event::Write(w))
                                }
                            }
                        }
                    }
                    Event::CloseWindow(b) => {
                        if let Some(w) = hub.close_window(b) {
                            self.queue.schedule(w.created_at, WRITE, Event::Write(w));
                        }
                    }
                    Event::Write(w) => {
                        self.store.append_to_route(&self.route, &w.messages, t)?;
                        for m in &w.messages {
                            if let Some(trace) = self.traces.get_mut(&m.message.id) {
                                trace.t3 = Some(t);
                            }
                        }
                        hub.mark_written(&w);
                    }
                    Event::Upload(_) | Event::CloudResult(_) => {
                        unreachable!("cloud event in edge run")
                    }
                }
            }
            // A chunk-only batch never closes on its own; flush it at the end.
            match hub.drain(self.clock.now()) {
                Some(w) => self.queue.schedule(w.created_at, WRITE, Event::Write(w)),
                None => break,
            }
        }
        Ok(hub.records().clone())
    }

    fn item_start(&mut self, d: usize, t: Millis) -> Result<(), SimError> {
        let device = &mut self.devices[d];
        let idx = device.driver.next_index();
        let (record, msg) = device.driver.run_item(idx, &self.clock)?;
        let send = t + record.c_edge_ms;
        self.traces.insert(
            msg.id,
            MessageTrace {
                id: msg.id,
                source: msg.source.clone(),
                c_edge_ms: record.c_edge_ms,
                t1: msg.t1,
                t2: None,
                t3: None,
                payload_bytes: msg.payload_bytes,
            },
        );
        self.queue.schedule(send, DEVICE, Event::Emit(d, msg));
        let device = &mut self.devices[d];
        if !device.driver.is_exhausted() {
            let gap = device.driver.next_gap()?;
            let next = match device.driver.spec().scalar_interval_ms() {
                // Sensor batches keep their cadence unless compute overruns it.
                Some(interval) => (t + interval).max(send) + gap,
                None => send + gap,
            };
            self.queue.schedule(next, DEVICE, Event::ItemStart(d));
        }
        self.sample_resources(d);
        Ok(())
    }

    fn run_cloud(&mut self, profile: &CloudFunctionProfile) -> Result<(), SimError> {
        while let Some((t, event)) = self.queue.pop() {
            self.clock.advance(t)?;
            match event {
                Event::Upload(d) => {
                    let device = &mut self.devices[d];
                    let idx = device.driver.next_index();
                    let mut upload = device.driver.next_upload(idx, &self.clock)?;
                    let result_bytes = match device.driver.spec().kind {
                        WorkloadKind::Scalar => upload.payload_bytes,
                        _ => device
                            .driver
                            .spec()
                            .result_payload_bytes
                            .sample_ms(&mut device.cloud_rng)
                            .map_err(|source| WorkloadError::Distribution {
                                field: "result_payload_bytes",
                                source,
                            })?
                            .max(0) as u64,
                    };
                    let outcome = run_cloud_item(
                        &mut upload,
                        profile,
                        &mut self.link,
                        &self.clock,
                        &mut device.link_rng,
                        &mut device.cloud_rng,
                    );
                    let next = match outcome {
                        CloudOutcome::Completed(timing) => {
                            self.traces.insert(
                                upload.id,
                                MessageTrace {
                                    id: upload.id,
                                    source: upload.source.clone(),
                                    c_edge_ms: 0,
                                    t1: upload.t1,
                                    t2: Some(timing.t2),
                                    t3: None,
                                    payload_bytes: upload.payload_bytes,
                                },
                            );
                            let result = Message {
                                payload_bytes: result_bytes,
                                overhead_bytes: 0,
                                ..upload
                            };
                            self.queue.schedule(
                                timing.t3,
                                WRITE,
                                Event::CloudResult(Enqueued {
                                    message: result,
                                    t2: timing.t2,
                                }),
                            );
                            (timing.t2 + profile.gap_ms()).max(timing.t3)
                        }
                        CloudOutcome::Dropped => {
                            self.traces.insert(
                                upload.id,
                                MessageTrace {
                                    id: upload.id,
                                    source: upload.source.clone(),
                                    c_edge_ms: 0,
                                    t1: upload.t1,
                                    t2: None,
                                    t3: None,
                                    payload_bytes: upload.payload_bytes,
                                },
                            );
                            self.dropped += 1;
                            t + profile.gap_ms()
                        }
                    };
                    if !self.devices[d].driver.is_exhausted() {
                        self.queue.schedule(next, DEVICE, Event::Upload(d));
                    }
                    self.sample_resources(d);
                }
                Event::CloudResult(item) => {
                    let id = item.message.id;
                    self.store
                        .append_to_route(&self.route, std::slice::from_ref(&item), t)?;
                    if let Some(trace) = self.traces.get_mut(&id) {
                        trace.t3 = Some(t);
                    }
                }
                _ => unreachable!("edge event in cloud run"),
            }
        }
        Ok(())
    }
}
