use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::frame::{FrameFlags, LambdaFrame, FRAME_HEADER_LEN};
use super::{Endpoint, RequestId, WorkloadId};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Request,
    Response,
}

/// A complete RPC: every frame `0..total` present exactly once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub request_id: RequestId,
    pub workload_id: WorkloadId,
    pub direction: Direction,
    /// One frame per sequence number, ordered by `seq`.
    pub frames: Vec<LambdaFrame>,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn total(&self) -> u16 {
        self.frames.len() as u16
    }

    pub fn is_rdma(&self) -> bool {
        self.frames.iter().any(|f| f.flags.is_rdma_write())
    }
}

/// Ingress metadata handed to a lambda next to its headers. Read-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchData {
    pub source: Endpoint,
    pub arrival: SimTime,
    pub payload_len: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssembleError {
    #[error("no frames")]
    Empty,
    #[error("frame does not belong to this message")]
    Mismatch,
    #[error("message incomplete, missing seq {missing:?}")]
    Incomplete { missing: Vec<u16> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Push {
    Accepted,
    /// A frame with this seq was already held; the first arrival wins.
    Duplicate,
}

/// Incremental per-message reordering buffer.
#[derive(Debug, Clone)]
pub struct Reassembler {
    request_id: RequestId,
    workload_id: WorkloadId,
    total: u16,
    slots: Vec<Option<LambdaFrame>>,
    held: u16,
}

impl Reassembler {
    pub fn new(first: LambdaFrame) -> Self {
        let mut r = Reassembler {
            request_id: first.request_id,
            workload_id: first.workload_id,
            total: first.total,
            slots: vec![None; first.total as usize],
            held: 0,
        };
        r.push(first).expect("first frame always matches");
        r
    }

    pub fn request_id(&self) -> RequestId {
        self.request_id
    }

    pub fn workload_id(&self) -> WorkloadId {
        self.workload_id
    }

    pub fn total(&self) -> u16 {
        self.total
    }

    pub fn held(&self) -> u16 {
        self.held
    }

    pub fn push(&mut self, frame: LambdaFrame) -> Result<Push, AssembleError> {
        if frame.request_id != self.request_id
            || frame.workload_id != self.workload_id
            || frame.total != self.total
            || frame.seq >= self.total
        {
            return Err(AssembleError::Mismatch);
        }
        let slot = &mut self.slots[frame.seq as usize];
        if slot.is_some() {
            return Ok(Push::Duplicate);
        }
        *slot = Some(frame);
        self.held += 1;
        Ok(Push::Accepted)
    }

    pub fn is_complete(&self) -> bool {
        self.held == self.total
    }

    pub fn missing(&self) -> Vec<u16> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| i as u16)
            .collect()
    }

    pub fn finish(self) -> Result<Message, AssembleError> {
        if !self.is_complete() {
            return Err(AssembleError::Incomplete {
                missing: self.missing(),
            });
        }
        let frames: Vec<LambdaFrame> = self.slots.into_iter().map(Option::unwrap).collect();
        let direction = if frames[0].flags.is_response() {
            Direction::Response
        } else {
            Direction::Request
        };
        let payload = frames.iter().flat_map(|f| f.payload.iter().copied()).collect();
        Ok(Message {
            request_id: self.request_id,
            workload_id: self.workload_id,
            direction,
            frames,
            payload,
        })
    }
}

/// Orders `frames` by seq; duplicates keep their first arrival.
pub fn assemble_message<I>(frames: I) -> Result<Message, AssembleError>
where
    I: IntoIterator<Item = LambdaFrame>,
{
    let mut iter = frames.into_iter();
    let mut r = Reassembler::new(iter.next().ok_or(AssembleError::Empty)?);
    for f in iter {
        r.push(f)?;
    }
    r.finish()
}

/// Splits `payload` into MTU-sized frames. An empty payload still yields one frame.
pub fn fragment(
    workload_id: WorkloadId,
    request_id: RequestId,
    flags: FrameFlags,
    payload: &[u8],
    mtu: usize,
) -> Vec<LambdaFrame> {
    let chunk = mtu - FRAME_HEADER_LEN;
    let total = payload.len().div_ceil(chunk).max(1);
    assert!(total <= u16::MAX as usize, "payload needs more than 65535 frames");
    (0..total)
        .map(|i| {
            let lo = i * chunk;
            let hi = (lo + chunk).min(payload.len());
            LambdaFrame {
                flags,
                workload_id,
                request_id,
                seq: i as u16,
                total: total as u16,
                payload: payload[lo.min(hi)..hi].to_vec(),
            }
        })
        .collect()
}
