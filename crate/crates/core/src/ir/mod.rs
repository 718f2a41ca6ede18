//! The lambda instruction set, its text format, validator and interpreter.

mod interp;
mod services;
mod store;
mod text;
mod types;
mod validate;

pub use interp::{
    checked_range, load_be, match_header, match_schema, memcpy_units, store_be, Emitted,
    Execution, Interpreter, Trap, MAX_CALL_DEPTH,
};
pub use services::{Echo, NoServices, ServiceReply, Services};
pub use store::FlatStore;
pub use text::{format_instr, parse_program, print_function, print_lambda, print_program, ParseError};
pub use types::*;
pub use validate::{validate, validate_lambda, Location, ValidationReport, Violation, ViolationKind};
