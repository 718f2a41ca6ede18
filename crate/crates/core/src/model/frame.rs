use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{RequestId, WorkloadId};

pub const FRAME_MAGIC: u16 = 0xD41C;
pub const FRAME_VERSION: u8 = 1;
/// magic(2) version(1) flags(1) workload(4) request(8) seq(2) total(2) len(2)
pub const FRAME_HEADER_LEN: usize = 22;
pub const DEFAULT_MTU: usize = 1500;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame of {size} bytes exceeds MTU {mtu}")]
    Oversize { size: usize, mtu: usize },
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
    #[error("invalid frame: {0}")]
    Invalid(&'static str),
}

/// Flag byte of the transport header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct FrameFlags(u8);

impl FrameFlags {
    pub const RESPONSE: FrameFlags = FrameFlags(1 << 0);
    pub const RDMA_WRITE: FrameFlags = FrameFlags(1 << 1);
    pub const EVENT_TRIGGER: FrameFlags = FrameFlags(1 << 2);
    const KNOWN: u8 = 0b111;

    pub const fn empty() -> Self {
        FrameFlags(0)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    /// Unknown bits are dropped.
    pub const fn from_bits_truncate(bits: u8) -> Self {
        FrameFlags(bits & Self::KNOWN)
    }

    pub const fn contains(self, other: FrameFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: FrameFlags) {
        self.0 |= other.0;
    }

    pub const fn union(self, other: FrameFlags) -> Self {
        FrameFlags(self.0 | other.0)
    }

    pub const fn is_response(self) -> bool {
        self.contains(Self::RESPONSE)
    }

    pub const fn is_rdma_write(self) -> bool {
        self.contains(Self::RDMA_WRITE)
    }

    pub const fn is_event_trigger(self) -> bool {
        self.contains(Self::EVENT_TRIGGER)
    }
}

/// One packet of a lambda RPC: the transport header plus its payload bytes.
///
/// `payload_len` is not stored; it is always `payload.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LambdaFrame {
    pub flags: FrameFlags,
    pub workload_id: WorkloadId,
    pub request_id: RequestId,
    pub seq: u16,
    pub total: u16,
    pub payload: Vec<u8>,
}

impl LambdaFrame {
    /// A single-frame request.
    pub fn request(workload_id: WorkloadId, request_id: RequestId, payload: Vec<u8>) -> Self {
        LambdaFrame {
            flags: FrameFlags::empty(),
            workload_id,
            request_id,
            seq: 0,
            total: 1,
            payload,
        }
    }

    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_HEADER_LEN + self.payload.len()
    }

    fn check(&self) -> Result<(), FrameError> {
        if self.total == 0 {
            return Err(FrameError::Invalid("total must be at least 1"));
        }
        if self.seq >= self.total {
            return Err(FrameError::Invalid("seq must be below total"));
        }
        if self.payload.len() > u16::MAX as usize {
            return Err(FrameError::Invalid("payload longer than 65535 bytes"));
        }
        Ok(())
    }
}

/// Serializes `frame` big-endian in the fixed header order, followed by the payload.
pub fn encode_frame(frame: &LambdaFrame, mtu: usize) -> Result<Vec<u8>, FrameError> {
    frame.check()?;
    let size = frame.encoded_len();
    if size > mtu {
        return Err(FrameError::Oversize { size, mtu });
    }
    let mut out = Vec::with_capacity(size);
    out.extend_from_slice(&FRAME_MAGIC.to_be_bytes());
    out.push(FRAME_VERSION);
    out.push(frame.flags.bits());
    out.extend_from_slice(&frame.workload_id.to_be_bytes());
    out.extend_from_slice(&frame.request_id.to_be_bytes());
    out.extend_from_slice(&frame.seq.to_be_bytes());
    out.extend_from_slice(&frame.total.to_be_bytes());
    out.extend_from_slice(&(frame.payload.len() as u16).to_be_bytes());
    out.extend_from_slice(&frame.payload);
    Ok(out)
}

pub fn decode_frame(bytes: &[u8]) -> Result<LambdaFrame, FrameError> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(FrameError::Malformed("shorter than transport header"));
    }
    let be16 = |at: usize| u16::from_be_bytes([bytes[at], bytes[at + 1]]);
    if be16(0) != FRAME_MAGIC {
        return Err(FrameError::Malformed("bad magic"));
    }
    if bytes[2] != FRAME_VERSION {
        return Err(FrameError::Malformed("unsupported version"));
    }
    let flags = FrameFlags::from_bits_truncate(bytes[3]);
    let workload_id = u32::from_be_bytes(bytes[4..8].try_into().unwrap());
    let request_id = u64::from_be_bytes(bytes[8..16].try_into().unwrap());
    let seq = be16(16);
    let total = be16(18);
    let len = be16(20) as usize;
    let body = &bytes[FRAME_HEADER_LEN..];
    if body.len() < len {
        return Err(FrameError::Malformed("truncated payload"));
    }
    if body.len() > len {
        return Err(FrameError::Malformed("trailing bytes after payload"));
    }
    if total == 0 || seq >= total {
        return Err(FrameError::Malformed("sequence number out of range"));
    }
    Ok(LambdaFrame {
        flags,
        workload_id,
        request_id,
        seq,
        total,
        payload: body.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_empty_frame() {
        let f = LambdaFrame::request(1, 7, vec![]);
        let bytes = encode_frame(&f, DEFAULT_MTU).unwrap();
        assert_eq!(
            bytes,
            [
                0xD4, 0x1C, 0x01, 0x00, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 7, 0, 0, 0, 1, 0, 0
            ]
        );
    }

    #[test]
    fn golden_with_payload() {
        let f = LambdaFrame::request(1, 7, b"abc".to_vec());
        let bytes = encode_frame(&f, DEFAULT_MTU).unwrap();
        assert_eq!(bytes.len(), 25);
        assert_eq!(&bytes[20..22], &[0, 3]);
        assert_eq!(&bytes[22..], b"abc");
    }

    #[test]
    fn oversize_rejected() {
        let f = LambdaFrame::request(1, 7, vec![0; 1500]);
        assert_eq!(
            encode_frame(&f, DEFAULT_MTU),
            Err(FrameError::Oversize { size: 1522, mtu: 1500 })
        );
        // exactly at the MTU is fine
        let f = LambdaFrame::request(1, 7, vec![0; 1478]);
        assert_eq!(encode_frame(&f, DEFAULT_MTU).unwrap().len(), 1500);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_frame(&LambdaFrame::request(1, 1, vec![]), DEFAULT_MTU).unwrap();
        bytes[0] = 0;
        bytes[1] = 0;
        assert!(matches!(decode_frame(&bytes), Err(FrameError::Malformed(_))));
    }

    #[test]
    fn bad_version() {
        let mut bytes = encode_frame(&LambdaFrame::request(1, 1, vec![]), DEFAULT_MTU).unwrap();
        bytes[2] = 9;
        assert!(matches!(decode_frame(&bytes), Err(FrameError::Malformed(_))));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes =
            encode_frame(&LambdaFrame::request(1, 1, vec![1; 10]), DEFAULT_MTU).unwrap();
        bytes.truncate(FRAME_HEADER_LEN + 5);
        assert_eq!(
            decode_frame(&bytes),
            Err(FrameError::Malformed("truncated payload"))
        );
    }

    #[test]
    fn seq_must_be_below_total() {
        let mut f = LambdaFrame::request(1, 1, vec![]);
        f.seq = 1;
        assert!(encode_frame(&f, DEFAULT_MTU).is_err());
    }

    fn arb_frame() -> impl Strategy<Value = LambdaFrame> {
        (
            0u8..8,
            any::<u32>(),
            any::<u64>(),
            1u16..64,
            proptest::collection::vec(any::<u8>(), 0..1478),
        )
            .prop_flat_map(|(flags, wid, rid, total, payload)| {
                (0..total).prop_map(move |seq| LambdaFrame {
                    flags: FrameFlags::from_bits_truncate(flags),
                    workload_id: wid,
                    request_id: rid,
                    seq,
                    total,
                    payload: payload.clone(),
                })
            })
    }

    proptest! {
        #[test]
        fn round_trip(f in arb_frame()) {
            let bytes = encode_frame(&f, DEFAULT_MTU).unwrap();
            prop_assert_eq!(bytes.len(), FRAME_HEADER_LEN + f.payload.len());
            prop_assert_eq!(decode_frame(&bytes).unwrap(), f);
        }
    }
}
