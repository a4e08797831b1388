//! Pipeline clock and the event queue that drives virtual time.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Millis;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClockError {
    #[error("time regression: clock is at {now} ms, event scheduled at {event_time} ms")]
    TimeRegression { now: Millis, event_time: Millis },
    #[error("only a virtual clock can be advanced explicitly")]
    NotVirtual,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Virtual,
    Wall,
}

/// Pipeline clock.
///
/// A virtual clock moves only through [`Clock::advance`] and never backwards.
/// A wall clock reports milliseconds elapsed since it was created. In both
/// modes `skew_edge_ms` is applied only to timestamps written on the device
/// side through [`Clock::edge_stamp`]; it never affects event ordering.
#[derive(Debug, Clone, Copy)]
pub struct Clock {
    mode: ClockMode,
    now: Millis,
    skew_edge_ms: Millis,
    origin: Option<Instant>,
    scale: f64,
}

impl Clock {
    pub fn new_virtual(skew_edge_ms: Millis) -> Self {
        Self {
            mode: ClockMode::Virtual,
            now: 0,
            skew_edge_ms,
            origin: None,
            scale: 1.0,
        }
    }

    pub fn new_wall(skew_edge_ms: Millis) -> Self {
        Self::new_wall_scaled(skew_edge_ms, 1.0)
    }

    /// A wall clock where one pipeline millisecond lasts `scale` real
    /// milliseconds (`scale < 1` runs faster than real time).
    pub fn new_wall_scaled(skew_edge_ms: Millis, scale: f64) -> Self {
        Self {
            mode: ClockMode::Wall,
            now: 0,
            skew_edge_ms,
            origin: Some(Instant::now()),
            scale: if scale.is_finite() && scale > 0.0 {
                scale
            } else {
                1.0
            },
        }
    }

    /// Real instant at which a wall clock reads `t`.
    pub fn instant_of(&self, t: Millis) -> Option<Instant> {
        let origin = self.origin?;
        let real_ms = (t.max(0) as f64 * self.scale).max(0.0);
        Some(origin + Duration::from_secs_f64(real_ms / 1000.0))
    }

    /// Real duration of `ms` pipeline milliseconds.
    pub fn real_duration(&self, ms: Millis) -> Duration {
        Duration::from_secs_f64(ms.max(0) as f64 * self.scale / 1000.0)
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn skew_edge_ms(&self) -> Millis {
        self.skew_edge_ms
    }

    pub fn now(&self) -> Millis {
        match self.origin {
            Some(origin) => (origin.elapsed().as_secs_f64() * 1000.0 / self.scale) as Millis,
            None => self.now,
        }
    }

    /// Moves a virtual clock to `event_time`.
    pub fn advance(&mut self, event_time: Millis) -> Result<(), ClockError> {
        if self.mode != ClockMode::Virtual {
            return Err(ClockError::NotVirtual);
        }
        if event_time < self.now {
            return Err(ClockError::TimeRegression {
                now: self.now,
                event_time,
            });
        }
        self.now = event_time;
        Ok(())
    }

    /// Timestamp an edge-side component writes for the true instant `at`.
    pub fn edge_stamp(&self, at: Millis) -> Millis {
        at + self.skew_edge_ms
    }
}

struct Scheduled<E> {
    time: Millis,
    rank: u8,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the earliest key pops first.
        other.key().cmp(&self.key())
    }
}

impl<E> Scheduled<E> {
    fn key(&self) -> (Millis, u8, u64) {
        (self.time, self.rank, self.seq)
    }
}

/// Min-queue of timed events.
///
/// Events pop in `(time, rank, insertion order)` order, so equal-time events
/// are resolved first by `rank` and then FIFO.
pub struct EventQueue<E> {
    heap: BinaryHeap<Scheduled<E>>,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }

    pub fn schedule(&mut self, time: Millis, rank: u8, event: E) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Scheduled {
            time,
            rank,
            seq,
            event,
        });
    }

    pub fn pop(&mut self) -> Option<(Millis, E)> {
        self.heap.pop().map(|s| (s.time, s.event))
    }

    pub fn peek_time(&self) -> Option<Millis> {
        self.heap.peek().map(|s| s.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn advance_identity() {
        let mut c = Clock::new_virtual(0);
        c.advance(0).unwrap();
        assert_eq!(c.now(), 0);
    }

    #[test]
    fn advance_assigns() {
        let mut c = Clock::new_virtual(0);
        c.advance(1500).unwrap();
        assert_eq!(c.now(), 1500);
    }

    #[test]
    fn advance_rejects_regression() {
        let mut c = Clock::new_virtual(0);
        c.advance(100).unwrap();
        assert_eq!(
            c.advance(50),
            Err(ClockError::TimeRegression {
                now: 100,
                event_time: 50
            })
        );
        assert_eq!(c.now(), 100);
    }

    #[test]
    fn wall_clock_cannot_be_advanced() {
        let mut c = Clock::new_wall(0);
        assert_eq!(c.advance(10), Err(ClockError::NotVirtual));
    }

    #[test]
    fn skew_only_touches_edge_stamps() {
        let mut c = Clock::new_virtual(50);
        c.advance(1000).unwrap();
        assert_eq!(c.now(), 1000);
        assert_eq!(c.edge_stamp(c.now()), 1050);
    }

    #[test]
    fn equal_times_pop_by_rank_then_fifo() {
        let mut q = EventQueue::new();
        q.schedule(10, 1, "close");
        q.schedule(10, 0, "arrive-a");
        q.schedule(5, 3, "early");
        q.schedule(10, 0, "arrive-b");
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|(_, e)| e).collect();
        assert_eq!(order, ["early", "arrive-a", "arrive-b", "close"]);
    }

    proptest! {
        #[test]
        fn replayed_event_log_is_monotone(times in proptest::collection::vec(0i64..1_000_000, 1..200)) {
            let mut q = EventQueue::new();
            for (i, t) in times.iter().enumerate() {
                q.schedule(*t, (i % 3) as u8, i);
            }
            let mut clock = Clock::new_virtual(0);
            let mut seen = Vec::new();
            while let Some((t, _)) = q.pop() {
                clock.advance(t).unwrap();
                seen.push(clock.now());
            }
            prop_assert!(seen.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(seen.len(), times.len());
        }
    }
}
