//! Deterministic discrete-event simulation of a parameter server and its learners.

mod engine;
mod event;
mod speed;
mod trace;

pub use engine::{prepare, replay, run_experiment, simulate, RunOutput, Setup, SimError};
pub use event::{next_event, Event, EventError, EventKind, EventQueue};
pub use speed::{SpeedModel, SpeedSampler};
pub use trace::{arrivals, trace_csv, write_trace_csv, TraceEvent, TraceRow, TRACE_HEADER};
