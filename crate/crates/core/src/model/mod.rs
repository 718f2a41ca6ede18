//! Wire format and message model shared by every other module.

mod frame;
mod message;
mod schema;

pub use frame::{
    decode_frame, encode_frame, FrameError, FrameFlags, LambdaFrame, DEFAULT_MTU, FRAME_HEADER_LEN,
    FRAME_MAGIC, FRAME_VERSION,
};
pub use message::{
    assemble_message, fragment, AssembleError, Direction, MatchData, Message, Push, Reassembler,
};
pub use schema::{FieldSpec, HeaderSchema, SchemaError};

pub type WorkloadId = u32;
pub type RequestId = u64;
/// Opaque network endpoint address (gateway, KV store, host, ...).
pub type Endpoint = u32;
