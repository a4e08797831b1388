//! Device-to-cloud link: flight time and exact byte accounting.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dist::{Distribution, InvalidDistribution};
use crate::model::{Message, Millis};
use crate::rng::SeededRng;

/// Link capacity.
///
/// Written as a positive integer (bytes per second) or the string
/// `"unlimited"` in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bandwidth {
    Unlimited,
    BytesPerSec(u64),
}

impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Unlimited => s.serialize_str("unlimited"),
            Bandwidth::BytesPerSec(b) => s.serialize_u64(*b),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct BandwidthVisitor;

        impl Visitor<'_> for BandwidthVisitor {
            type Value = Bandwidth;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive byte rate or \"unlimited\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Bandwidth, E> {
                if v == 0 {
                    return Err(E::custom("bandwidth must be positive"));
                }
                Ok(Bandwidth::BytesPerSec(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Bandwidth, E> {
                if v <= 0 {
                    return Err(E::custom("bandwidth must be positive"));
                }
                Ok(Bandwidth::BytesPerSec(v as u64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Bandwidth, E> {
                match v {
                    "unlimited" => Ok(Bandwidth::Unlimited),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }

        d.deserialize_any(BandwidthVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    pub propagation_ms: Distribution,
    pub bandwidth_bytes_per_s: Bandwidth,
    #[serde(default)]
    pub per_message_overhead_bytes: u64,
    #[serde(default)]
    pub drop_probability: f64,
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), String> {
        self.propagation_ms
            .validate_non_negative()
            .map_err(|InvalidDistribution(e)| format!("propagation_ms: {e}"))?;
        if let Bandwidth::BytesPerSec(0) = self.bandwidth_bytes_per_s {
            return Err("bandwidth_bytes_per_s must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(format!(
                "drop_probability must lie in [0, 1], got {}",
                self.drop_probability
            ));
        }
        Ok(())
    }

    /// Whole milliseconds needed to clock `bytes` onto the link (ceiling).
    pub fn serialization_ms(&self, bytes: u64) -> Millis {
        match self.bandwidth_bytes_per_s {
            Bandwidth::Unlimited => 0,
            Bandwidth::BytesPerSec(bw) => {
                let num = u128::from(bytes) * 1000;
                num.div_ceil(u128::from(bw)) as Millis
            }
        }
    }

    /// Stamps the link's framing overhead onto an outgoing message.
    pub fn frame(&self, msg: &mut Message) {
        msg.overhead_bytes = self.per_message_overhead_bytes;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Arrived(Millis),
    Dropped,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteTotals {
    pub messages: u64,
    pub payload_bytes: u64,
    pub overhead_bytes: u64,
    pub transmitted_bytes: u64,
}

impl ByteTotals {
    fn add(&mut self, payload: u64, overhead: u64) {
        self.messages += 1;
        self.payload_bytes += payload;
        self.overhead_bytes += overhead;
        self.transmitted_bytes = self.payload_bytes + self.overhead_bytes;
    }

    fn merge(&mut self, other: &ByteTotals) {
        self.messages += other.messages;
        self.payload_bytes += other.payload_bytes;
        self.overhead_bytes += other.overhead_bytes;
        self.transmitted_bytes = self.payload_bytes + self.overhead_bytes;
    }
}

/// Running per-source byte totals of delivered messages.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteLedger {
    per_source: BTreeMap<String, ByteTotals>,
}

impl ByteLedger {
    pub fn record(&mut self, msg: &Message) {
        self.per_source
            .entry(msg.source.clone())
            .or_default()
            .add(msg.payload_bytes, msg.overhead_bytes);
    }

    pub fn merge(&mut self, other: &ByteLedger) {
        for (source, totals) in &other.per_source {
            self.per_source
                .entry(source.clone())
                .or_default()
                .merge(totals);
        }
    }

    /// Per-source totals, ordered by source name.
    pub fn report(&self) -> &BTreeMap<String, ByteTotals> {
        &self.per_source
    }

    pub fn total(&self) -> ByteTotals {
        let mut t = ByteTotals::default();
        for v in self.per_source.values() {
            t.merge(v);
        }
        t
    }
}

/// A link instance: model, ledger and per-source FIFO state.
#[derive(Debug, Clone)]
pub struct Link {
    model: LinkModel,
    ledger: ByteLedger,
    last_arrival: BTreeMap<String, Millis>,
}

impl Link {
    pub fn new(model: LinkModel) -> Self {
        Self {
            model,
            ledger: ByteLedger::default(),
            last_arrival: BTreeMap::new(),
        }
    }

    pub fn model(&self) -> &LinkModel {
        &self.model
    }

    pub fn ledger(&self) -> &ByteLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> ByteLedger {
        self.ledger
    }

    /// Flight time of `msg` for a given propagation sample, before FIFO.
    pub fn flight_ms(&self, msg: &Message, propagation_ms: Millis) -> Millis {
        propagation_ms + self.model.serialization_ms(msg.wire_bytes())
    }

    /// Sends `msg` at the true instant `send_time`.
    ///
    /// A message never overtakes an earlier one from the same source. Dropped
    /// messages leave the ledger untouched.
    pub fn deliver(&mut self, msg: &Message, send_time: Millis, rng: &mut SeededRng) -> Delivery {
        if self.model.drop_probability > 0.0 && rng.random::<f64>() < self.model.drop_probability {
            return Delivery::Dropped;
        }
        let propagation = self
            .model
            .propagation_ms
            .sample_ms(rng)
            .expect("link model validated")
            .max(0);
        let raw = send_time + self.flight_ms(msg, propagation);
        let last = self
            .last_arrival
            .entry(msg.source.clone())
            .or_insert(Millis::MIN);
        let arrival = raw.max(*last);
        *last = arrival;
        self.ledger.record(msg);
        Delivery::Arrived(arrival)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn msg(source: &str, payload: u64, overhead: u64) -> Message {
        Message {
            id: 0,
            source: source.into(),
            payload_bytes: payload,
            overhead_bytes: overhead,
            body: String::new(),
            t1: 0,
        }
    }

    fn link(prop: f64, bw: Bandwidth) -> Link {
        Link::new(LinkModel {
            propagation_ms: Distribution::Constant(prop),
            bandwidth_bytes_per_s: bw,
            per_message_overhead_bytes: 0,
            drop_probability: 0.0,
        })
    }

    #[test]
    fn unlimited_bandwidth_is_propagation_only() {
        let mut l = link(10.0, Bandwidth::Unlimited);
        let d = l.deliver(&msg("a", 5000, 100), 0, &mut SeededRng::new(1));
        assert_eq!(d, Delivery::Arrived(10));
    }

    #[test]
    fn exact_division() {
        let mut l = link(0.0, Bandwidth::BytesPerSec(1_000_000));
        let d = l.deliver(&msg("a", 900, 100), 0, &mut SeededRng::new(1));
        assert_eq!(d, Delivery::Arrived(1));
    }

    #[test]
    fn flight_doubles_with_size() {
        // Closed form: flight = ceil(bytes * 1000 / bw); with bw dividing
        // bytes * 1000 the ceiling is exact and doubling size doubles flight.
        let bw = 250_000;
        let s = 12_500;
        let expected = |bytes: u64| (bytes * 1000).div_ceil(bw) as Millis;
        let mut l = link(0.0, Bandwidth::BytesPerSec(bw));
        let mut rng = SeededRng::new(1);
        let Delivery::Arrived(f1) = l.deliver(&msg("a", s, 0), 0, &mut rng) else {
            panic!()
        };
        let Delivery::Arrived(f2) = l.deliver(&msg("b", 2 * s, 0), 0, &mut rng) else {
            panic!()
        };
        assert_eq!(f1, expected(s));
        assert_eq!(f2, 2 * f1);
    }

    #[test]
    fn fifo_per_source_only() {
        let mut l = Link::new(LinkModel {
            propagation_ms: Distribution::Constant(0.0),
            bandwidth_bytes_per_s: Bandwidth::BytesPerSec(1000),
            per_message_overhead_bytes: 0,
            drop_probability: 0.0,
        });
        let mut rng = SeededRng::new(1);
        // Big message first, small one right after: the small one waits.
        assert_eq!(
            l.deliver(&msg("a", 1000, 0), 0, &mut rng),
            Delivery::Arrived(1000)
        );
        assert_eq!(
            l.deliver(&msg("a", 1, 0), 10, &mut rng),
            Delivery::Arrived(1000)
        );
        // Another source is not held back.
        assert_eq!(
            l.deliver(&msg("b", 1, 0), 10, &mut rng),
            Delivery::Arrived(11)
        );
    }

    #[test]
    fn drops_skip_the_ledger() {
        let mut l = Link::new(LinkModel {
            propagation_ms: Distribution::Constant(0.0),
            bandwidth_bytes_per_s: Bandwidth::Unlimited,
            per_message_overhead_bytes: 0,
            drop_probability: 1.0,
        });
        assert_eq!(
            l.deliver(&msg("a", 10, 1), 0, &mut SeededRng::new(1)),
            Delivery::Dropped
        );
        assert_eq!(l.ledger().total(), ByteTotals::default());
    }

    #[test]
    fn empty_ledger_is_zero() {
        let ledger = ByteLedger::default();
        assert!(ledger.report().is_empty());
        assert_eq!(ledger.total(), ByteTotals::default());
    }

    #[test]
    fn calibrated_audio_edge_ledger() {
        // 104 messages, 162 B payload, 2242 B framing per message.
        let mut l = Link::new(LinkModel {
            propagation_ms: Distribution::Constant(25.0),
            bandwidth_bytes_per_s: Bandwidth::BytesPerSec(1_000_000),
            per_message_overhead_bytes: 2242,
            drop_probability: 0.0,
        });
        let mut rng = SeededRng::new(1);
        for i in 0..104 {
            let mut m = msg("device-0", 162, 0);
            l.model().clone().frame(&mut m);
            l.deliver(&m, i * 5000, &mut rng);
        }
        let t = l.ledger().total();
        assert_eq!(t.transmitted_bytes, t.payload_bytes + t.overhead_bytes);
        let mb = t.transmitted_bytes as f64 / 1e6;
        assert!((mb - 0.25).abs() < 0.005, "{mb}");
    }

    #[test]
    fn bandwidth_serde() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct H {
            b: Bandwidth,
        }
        assert_eq!(
            toml::from_str::<H>("b = 'unlimited'").unwrap().b,
            Bandwidth::Unlimited
        );
        assert_eq!(
            toml::from_str::<H>("b = 1000").unwrap().b,
            Bandwidth::BytesPerSec(1000)
        );
        assert!(toml::from_str::<H>("b = 0").is_err());
        assert!(toml::from_str::<H>("b = 'fast'").is_err());
        let j = serde_json::to_string(&H {
            b: Bandwidth::Unlimited,
        })
        .unwrap();
        assert_eq!(
            serde_json::from_str::<H>(&j).unwrap().b,
            Bandwidth::Unlimited
        );
    }

    proptest! {
        #[test]
        fn ledger_conserves_bytes(sizes in proptest::collection::vec((0u64..100_000, 0u64..5_000), 0..100)) {
            let mut l = link(3.0, Bandwidth::BytesPerSec(123_457));
            let mut rng = SeededRng::new(11);
            let mut expected = 0;
            for (i, (p, o)) in sizes.iter().enumerate() {
                let src = if i % 2 == 0 { "a" } else { "b" };
                prop_assert!(matches!(l.deliver(&msg(src, *p, *o), i as Millis, &mut rng), Delivery::Arrived(_)));
                expected += p + o;
            }
            let t = l.ledger().total();
            prop_assert_eq!(t.transmitted_bytes, expected);
            prop_assert_eq!(t.messages, sizes.len() as u64);
            let per: u64 = l.ledger().report().values().map(|v| v.transmitted_bytes).sum();
            prop_assert_eq!(per, expected);
        }

        #[test]
        fn flight_is_monotone_in_size(a in 0u64..10_000_000, b in 0u64..10_000_000, bw in 1u64..10_000_000, prop in 0i64..500) {
            let l = link(0.0, Bandwidth::BytesPerSec(bw));
            let (small, big) = (a.min(b), a.max(b));
            prop_assert!(l.flight_ms(&msg("a", small, 0), prop) <= l.flight_ms(&msg("a", big, 0), prop));
            prop_assert!(l.flight_ms(&msg("a", small, 0), prop) <= l.flight_ms(&msg("a", small, 0), prop + 1));
        }
    }
}
