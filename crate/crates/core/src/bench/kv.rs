//! In-process key-value store reached through EMITPKT.
//!
//! Wire format, both directions, integers big-endian:
//! `op:u8 (0 GET, 1 SET) | key_len:u16 | val_len:u16 | key | value`.
//! A GET reply carries the stored value (empty if absent); a SET reply
//! echoes the request.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::ir::{ServiceReply, Services};
use crate::model::Endpoint;
use crate::time::SimTime;

/// Endpoint id the KV lambdas address.
pub const KV_ENDPOINT: Endpoint = 0x4B56;

pub const KV_HEADER_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KvOp {
    Get = 0,
    Set = 1,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvMessage {
    pub op: KvOp,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KvError {
    #[error("kv message shorter than its header")]
    Short,
    #[error("unknown kv op {0}")]
    Op(u8),
    #[error("kv lengths exceed the message")]
    Length,
}

impl KvMessage {
    pub fn get(key: &[u8]) -> Self {
        KvMessage {
            op: KvOp::Get,
            key: key.to_vec(),
            value: Vec::new(),
        }
    }

    pub fn set(key: &[u8], value: &[u8]) -> Self {
        KvMessage {
            op: KvOp::Set,
            key: key.to_vec(),
            value: value.to_vec(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(KV_HEADER_LEN + self.key.len() + self.value.len());
        b.push(self.op as u8);
        b.extend_from_slice(&(self.key.len() as u16).to_be_bytes());
        b.extend_from_slice(&(self.value.len() as u16).to_be_bytes());
        b.extend_from_slice(&self.key);
        b.extend_from_slice(&self.value);
        b
    }

    /// Trailing bytes past `val_len` are ignored.
    pub fn decode(b: &[u8]) -> Result<Self, KvError> {
        if b.len() < KV_HEADER_LEN {
            return Err(KvError::Short);
        }
        let op = match b[0] {
            0 => KvOp::Get,
            1 => KvOp::Set,
            o => return Err(KvError::Op(o)),
        };
        let klen = u16::from_be_bytes([b[1], b[2]]) as usize;
        let vlen = u16::from_be_bytes([b[3], b[4]]) as usize;
        let end = KV_HEADER_LEN + klen + vlen;
        if b.len() < end {
            return Err(KvError::Length);
        }
        Ok(KvMessage {
            op,
            key: b[KV_HEADER_LEN..KV_HEADER_LEN + klen].to_vec(),
            value: b[KV_HEADER_LEN + klen..end].to_vec(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct KvStore {
    map: BTreeMap<Vec<u8>, Vec<u8>>,
    pub latency: SimTime,
    pub gets: u64,
    pub sets: u64,
    pub errors: u64,
}

impl Default for KvStore {
    fn default() -> Self {
        KvStore::new(SimTime::from_micros(20))
    }
}

impl KvStore {
    pub fn new(latency: SimTime) -> Self {
        KvStore {
            map: BTreeMap::new(),
            latency,
            gets: 0,
            sets: 0,
            errors: 0,
        }
    }

    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.map.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Applies one request; returns the reply bytes.
    pub fn handle(&mut self, request: &[u8]) -> Vec<u8> {
        match KvMessage::decode(request) {
            Ok(m) => match m.op {
                KvOp::Get => {
                    self.gets += 1;
                    let v = self.map.get(&m.key).cloned().unwrap_or_default();
                    KvMessage { value: v, ..m }.encode()
                }
                KvOp::Set => {
                    self.sets += 1;
                    let reply = m.encode();
                    self.map.insert(m.key, m.value);
                    reply
                }
            },
            Err(_) => {
                self.errors += 1;
                Vec::new()
            }
        }
    }
}

impl Services for KvStore {
    fn call(&mut self, endpoint: Endpoint, request: &[u8]) -> ServiceReply {
        if endpoint != KV_ENDPOINT {
            return ServiceReply::default();
        }
        ServiceReply {
            bytes: self.handle(request),
            latency: self.latency,
        }
    }
}

/// One store shared by several backends.
#[derive(Debug, Clone, Default)]
pub struct SharedKv(pub Arc<Mutex<KvStore>>);

impl SharedKv {
    pub fn new(store: KvStore) -> Self {
        SharedKv(Arc::new(Mutex::new(store)))
    }

    pub fn with<R>(&self, f: impl FnOnce(&mut KvStore) -> R) -> R {
        f(&mut self.0.lock().expect("kv lock"))
    }
}

impl Services for SharedKv {
    fn call(&mut self, endpoint: Endpoint, request: &[u8]) -> ServiceReply {
        self.with(|s| s.call(endpoint, request))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_bytes() {
        let m = KvMessage::set(b"ab", b"xyz");
        assert_eq!(m.encode(), [1, 0, 2, 0, 3, b'a', b'b', b'x', b'y', b'z']);
        assert_eq!(KvMessage::get(b"k").encode(), [0, 0, 1, 0, 0, b'k']);
        assert_eq!(KvMessage::decode(&m.encode()).unwrap(), m);
        assert_eq!(KvMessage::decode(&[0, 0]), Err(KvError::Short));
        assert_eq!(KvMessage::decode(&[9, 0, 0, 0, 0]), Err(KvError::Op(9)));
        assert_eq!(KvMessage::decode(&[0, 0, 4, 0, 0, 1]), Err(KvError::Length));
    }

    #[test]
    fn get_after_set() {
        let mut s = KvStore::default();
        let absent = KvMessage::decode(&s.handle(&KvMessage::get(b"k").encode())).unwrap();
        assert!(absent.value.is_empty());
        s.handle(&KvMessage::set(b"k", b"v1").encode());
        s.handle(&KvMessage::set(b"k", b"v2").encode());
        let r = s.call(KV_ENDPOINT, &KvMessage::get(b"k").encode());
        assert_eq!(KvMessage::decode(&r.bytes).unwrap().value, b"v2");
        assert_eq!(r.latency, SimTime::from_micros(20));
        assert!(s.call(1, b"").bytes.is_empty());
    }
}
