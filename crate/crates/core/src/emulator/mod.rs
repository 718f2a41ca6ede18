//! Discrete-event model of the NIC running compiled firmware.
//!
//! A single virtual clock drives frame arrivals, thread completions,
//! reassembly timeouts and firmware loads. Given the same firmware,
//! schedule and seed, a run always produces the same trace.

mod exec;
mod memory;
mod nic;
mod nic_model;
mod trace;
mod wfq;

pub use exec::{ExecResult, Executor, Exit, Request};
pub use memory::{PhysMem, Region, RegionTracker, Violation};
pub use nic::{run, Completion, LoadError, Nic, NicOutput, RunOutput};
pub use nic_model::{ModelError, NicModel, Tier};
pub use trace::{parse_trace, trace_text, Outcome, TraceParseError, TraceRecord};
pub use wfq::Wfq;
