//! Deterministic simulator and benchmark harness for serverless edge-to-cloud
//! pipelines.
//!
//! An edge device runs a workload item by item and ships each result as a
//! small message through a hub into blob storage. Every message carries three
//! timestamps: `t1` when the device sends it, `t2` when the hub enqueues it and
//! `t3` when the blob holding it is created. From these and the device compute
//! time the harness derives compute time, time-in-flight, hub residence and
//! end-to-end latency, and it keeps an exact ledger of the bytes crossing the
//! device link. A cloud-only pipeline (upload raw input, trigger a function,
//! write the result) runs through the same machinery for comparison, and a
//! small cost model turns usage into a monthly bill.
//!
//! Runs are driven by a virtual clock and seeded random streams, so equal
//! seeds produce byte-identical reports. A live mode replays the same
//! pipeline against the wall clock.

pub mod charts;
pub mod clock;
pub mod cloud;
pub mod config;
pub mod cost;
pub mod dist;
pub mod hub;
pub mod live;
pub mod metrics;
pub mod model;
pub mod network;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod storage;
pub mod workloads;

pub use clock::{Clock, ClockMode, EventQueue};
pub use config::{load_config, ScenarioConfig};
pub use dist::Distribution;
pub use metrics::{MetricRow, RunReport};
pub use model::{Message, MessageId, Millis, TimestampRecord};
pub use rng::SeededRng;
pub use scenario::{run_scenario, RunOptions, RunOutcome};
