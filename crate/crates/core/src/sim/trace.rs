//! Per-run event trace and its CSV form.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use crate::scheduler::{LearnerId, UpdateRecord};

pub const TRACE_HEADER: &str = "time,event,learner,clock,round,eta,g_norm,value";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    /// A payload reached the server (before it was applied or queued).
    Arrive,
    /// An update was applied.
    Update,
    /// An epoch ended; `value` is the test accuracy.
    EpochBoundary,
    /// An SVRG snapshot was taken; `value` is the full-gradient norm.
    Snapshot,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceEvent::Arrive => "arrive",
            TraceEvent::Update => "update",
            TraceEvent::EpochBoundary => "epoch_boundary",
            TraceEvent::Snapshot => "snapshot",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub event: TraceEvent,
    pub learner: Option<LearnerId>,
    /// Server clock after the event.
    pub clock: u64,
    pub round: Option<u64>,
    pub eta: Option<f64>,
    pub g_norm: Option<f64>,
    pub value: Option<f64>,
}

impl TraceRow {
    fn bare(time: f64, event: TraceEvent, clock: u64) -> Self {
        Self { time, event, learner: None, clock, round: None, eta: None, g_norm: None, value: None }
    }

    pub fn arrive(time: f64, learner: LearnerId, clock: u64) -> Self {
        Self { learner: Some(learner), ..Self::bare(time, TraceEvent::Arrive, clock) }
    }

    pub fn update(time: f64, r: &UpdateRecord) -> Self {
        Self {
            learner: Some(r.learner),
            round: Some(r.round),
            eta: Some(r.eta),
            g_norm: Some(r.g_unbiased_norm),
            ..Self::bare(time, TraceEvent::Update, r.clock)
        }
    }

    pub fn epoch(time: f64, clock: u64, accuracy: f64) -> Self {
        Self { value: Some(accuracy), ..Self::bare(time, TraceEvent::EpochBoundary, clock) }
    }

    pub fn snapshot(time: f64, clock: u64, full_grad_norm: f64) -> Self {
        Self { value: Some(full_grad_norm), ..Self::bare(time, TraceEvent::Snapshot, clock) }
    }
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(64 * rows.len() + TRACE_HEADER.len() + 1);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.time,
            r.event,
            opt(r.learner),
            r.clock,
            opt(r.round),
            opt(r.eta),
            opt(r.g_norm),
            opt(r.value)
        );
    }
    out
}

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> std::io::Result<()> {
    std::fs::write(path, trace_csv(rows))
}

/// Learners in the order their payloads reached the server.
pub fn arrivals(rows: &[TraceRow]) -> Vec<LearnerId> {
    rows.iter().filter(|r| r.event == TraceEvent::Arrive).filter_map(|r| r.learner).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows() {
        let rec = UpdateRecord { clock: 3, learner: LearnerId::new(2), g_unbiased_norm: 0.5, eta: 0.01, round: 1 };
        let rows = [TraceRow::arrive(1.5, LearnerId::new(2), 2), TraceRow::update(1.5, &rec), TraceRow::epoch(1.5, 3, 0.25)];
        assert_eq!(
            trace_csv(&rows),
            "time,event,learner,clock,round,eta,g_norm,value\n\
             1.5,arrive,2,2,,,,\n\
             1.5,update,2,3,1,0.01,0.5,\n\
             1.5,epoch_boundary,,3,,,,0.25\n"
        );
        assert_eq!(arrivals(&rows), vec![LearnerId::new(2)]);
    }
}
