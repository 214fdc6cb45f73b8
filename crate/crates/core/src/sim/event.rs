//! Time-ordered event queue.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::scheduler::LearnerId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    /// A learner finished computing and pushes its payload.
    GradientReady,
    /// Fresh parameters reach a learner, which starts computing.
    ParamsDelivered,
    EpochBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub learner: LearnerId,
    pub seq: u64,
}

impl Eq for Event {}

impl Ord for Event {
    // reversed so the max-heap yields the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EventError {
    #[error("event queue is empty")]
    Empty,
    #[error("event at {time} is earlier than the current time {now}")]
    TimeReversal { time: f64, now: f64 },
    #[error("event time {0} is not a finite non-negative number")]
    BadTime(f64),
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
    now: f64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Time of the last popped event.
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedules an event; sequence numbers are handed out in push order.
    pub fn push(&mut self, time: f64, kind: EventKind, learner: LearnerId) -> Result<u64, EventError> {
        if !(time.is_finite() && time >= 0.0) {
            return Err(EventError::BadTime(time));
        }
        if time < self.now {
            return Err(EventError::TimeReversal { time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, kind, learner, seq });
        Ok(seq)
    }

    /// Drops every scheduled event but keeps the clock and sequence counter.
    pub fn clear(&mut self) {
        self.heap.clear();
    }
}

/// Pops the event with the smallest `(time, seq)`.
pub fn next_event(queue: &mut EventQueue) -> Result<Event, EventError> {
    let ev = queue.heap.pop().ok_or(EventError::Empty)?;
    if ev.time < queue.now {
        return Err(EventError::TimeReversal { time: ev.time, now: queue.now });
    }
    queue.now = ev.time;
    Ok(ev)
}
