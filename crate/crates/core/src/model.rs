//! Shared domain types.

use serde::{Deserialize, Serialize};

/// Pipeline time in integer milliseconds.
pub type Millis = i64;

/// Message ordinal, unique within a run.
pub type MessageId = u64;

/// One result message travelling from a device towards storage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: MessageId,
    pub source: String,
    pub payload_bytes: u64,
    /// Framing and header bytes added on the wire.
    pub overhead_bytes: u64,
    pub body: String,
    /// Send timestamp as written by the device (includes edge clock skew).
    pub t1: Millis,
}

impl Message {
    /// Bytes this message occupies on the link.
    pub fn wire_bytes(&self) -> u64 {
        self.payload_bytes + self.overhead_bytes
    }
}

/// The three pipeline timestamps plus the device compute time of one message.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestampRecord {
    pub t1: Option<Millis>,
    pub t2: Option<Millis>,
    pub t3: Option<Millis>,
    pub c_edge: Millis,
}

impl TimestampRecord {
    pub fn is_complete(&self) -> bool {
        self.t1.is_some() && self.t2.is_some() && self.t3.is_some()
    }
}

/// Converts a fractional millisecond value to the integer clock, rounding
/// half to even.
pub fn round_ms(value: f64) -> Millis {
    value.round_ties_even() as Millis
}

/// Converts seconds to integer milliseconds, rounding half to even.
pub fn secs_to_ms(seconds: f64) -> Millis {
    round_ms(seconds * 1000.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_even() {
        assert_eq!(round_ms(0.5), 0);
        assert_eq!(round_ms(1.5), 2);
        assert_eq!(round_ms(2.5), 2);
        assert_eq!(round_ms(2.51), 3);
        assert_eq!(secs_to_ms(4.77), 4770);
        assert_eq!(secs_to_ms(0.0005), 0);
        assert_eq!(secs_to_ms(0.0015), 2);
    }

    #[test]
    fn wire_bytes_adds_overhead() {
        let m = Message {
            id: 0,
            source: "device-0".into(),
            payload_bytes: 162,
            overhead_bytes: 2242,
            body: String::new(),
            t1: 0,
        };
        assert_eq!(m.wire_bytes(), 2404);
    }
}
