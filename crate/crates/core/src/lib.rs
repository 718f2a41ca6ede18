//! λ-NIC: serverless lambdas on an emulated ASIC SmartNIC.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: the wire frame, messages and application header schemas.
//! - [`ir`]: the restricted lambda instruction set, its textual format, the
//!   validator and the reference interpreter.
//! - [`compiler`]: Match+Lambda programs to per-core [`compiler::Firmware`].
//! - [`emulator`]: deterministic discrete-event model of the NPU grid.
//! - [`control`]: workload manager, registry journal, gateway, host baseline
//!   and the UDP loopback service.
//! - [`bench`]: the benchmark workloads, load drivers and metric reports.

pub mod bench;
pub mod compiler;
pub mod control;
pub mod emulator;
pub mod ir;
pub mod model;
pub mod time;

pub use compiler::{compile, CompileOptions, CompileReport, Firmware};
pub use emulator::{Nic, NicModel, TraceRecord};
pub use ir::{LambdaProgram, MLProgram};
pub use model::{LambdaFrame, Message};
pub use time::SimTime;
