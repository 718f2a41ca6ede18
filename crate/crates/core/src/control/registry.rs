//! Workload registry and its append-only journal.
//!
//! Record layout, all integers big-endian:
//!
//! ```text
//! u32 len | u8 op | u16 name_len | name | u32 id | [u8; 32] digest | u16 count | count × u16 node
//! ```
//!
//! `len` counts the bytes after itself. A torn final record is ignored on
//! replay and cut off before the next append.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::WorkloadId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JournalOp {
    /// Id assigned to a new name.
    Alloc = 1,
    /// Firmware with `digest` running on `nodes`.
    Deploy = 2,
    Retire = 3,
}

impl JournalOp {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(JournalOp::Alloc),
            2 => Some(JournalOp::Deploy),
            3 => Some(JournalOp::Retire),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub op: JournalOp,
    pub name: String,
    pub id: WorkloadId,
    pub digest: [u8; 32],
    pub nodes: Vec<u16>,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("journal {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("journal {path}: corrupt record at byte {offset}")]
    Corrupt { path: PathBuf, offset: u64 },
    #[error("unknown workload `{0}`")]
    Unknown(String),
}

impl Record {
    pub fn encode(&self) -> Vec<u8> {
        let name = self.name.as_bytes();
        let mut body = Vec::with_capacity(1 + 2 + name.len() + 4 + 32 + 2 + 2 * self.nodes.len());
        body.push(self.op as u8);
        body.extend_from_slice(&(name.len() as u16).to_be_bytes());
        body.extend_from_slice(name);
        body.extend_from_slice(&self.id.to_be_bytes());
        body.extend_from_slice(&self.digest);
        body.extend_from_slice(&(self.nodes.len() as u16).to_be_bytes());
        for n in &self.nodes {
            body.extend_from_slice(&n.to_be_bytes());
        }
        let mut out = Vec::with_capacity(4 + body.len());
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }

    /// Decodes one record body (without the length prefix).
    pub fn decode(body: &[u8]) -> Option<Record> {
        let mut c = Cursor { b: body, at: 0 };
        let op = JournalOp::from_u8(c.take(1)?[0])?;
        let nlen = c.u16()? as usize;
        let name = String::from_utf8(c.take(nlen)?.to_vec()).ok()?;
        let id = u32::from_be_bytes(c.take(4)?.try_into().ok()?);
        let digest: [u8; 32] = c.take(32)?.try_into().ok()?;
        let count = c.u16()? as usize;
        let mut nodes = Vec::with_capacity(count);
        for _ in 0..count {
            nodes.push(c.u16()?);
        }
        (c.at == body.len()).then_some(Record {
            op,
            name,
            id,
            digest,
            nodes,
        })
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.b.get(self.at..self.at + n)?;
        self.at += n;
        Some(s)
    }

    fn u16(&mut self) -> Option<u16> {
        Some(u16::from_be_bytes(self.take(2)?.try_into().ok()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Allocated,
    Deployed,
    Retired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub id: WorkloadId,
    pub digest: [u8; 32],
    pub nodes: Vec<u16>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    entries: BTreeMap<String, Entry>,
    next_id: WorkloadId,
}

impl Default for Registry {
    fn default() -> Self {
        Registry {
            entries: BTreeMap::new(),
            next_id: 1,
        }
    }
}

impl Registry {
    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    pub fn id_of(&self, name: &str) -> Option<WorkloadId> {
        self.entries
            .get(name)
            .filter(|e| e.status != Status::Retired)
            .map(|e| e.id)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e))
    }

    pub fn next_id(&self) -> WorkloadId {
        self.next_id
    }

    /// The record that would allocate an id for `name`.
    pub fn alloc_record(&self, name: &str) -> Record {
        Record {
            op: JournalOp::Alloc,
            name: name.to_string(),
            id: self.next_id,
            digest: [0; 32],
            nodes: Vec::new(),
        }
    }

    pub fn apply(&mut self, r: &Record) {
        match r.op {
            JournalOp::Alloc => {
                self.entries.insert(
                    r.name.clone(),
                    Entry {
                        id: r.id,
                        digest: [0; 32],
                        nodes: Vec::new(),
                        status: Status::Allocated,
                    },
                );
                self.next_id = self.next_id.max(r.id + 1);
            }
            JournalOp::Deploy => {
                let e = self.entries.entry(r.name.clone()).or_insert(Entry {
                    id: r.id,
                    digest: [0; 32],
                    nodes: Vec::new(),
                    status: Status::Allocated,
                });
                e.digest = r.digest;
                e.nodes = r.nodes.clone();
                e.status = Status::Deployed;
                self.next_id = self.next_id.max(r.id + 1);
            }
            JournalOp::Retire => {
                if let Some(e) = self.entries.get_mut(&r.name) {
                    e.status = Status::Retired;
                    e.nodes.clear();
                }
            }
        }
    }
}

/// Parses a journal image; returns the records and the length of the valid prefix.
pub fn parse_journal(bytes: &[u8]) -> (Vec<Record>, usize) {
    let mut out = Vec::new();
    let mut at = 0usize;
    while at + 4 <= bytes.len() {
        let len = u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        let Some(body) = bytes.get(at + 4..at + 4 + len) else {
            break;
        };
        let Some(r) = Record::decode(body) else {
            break;
        };
        out.push(r);
        at += 4 + len;
    }
    (out, at)
}

pub fn replay(records: &[Record]) -> Registry {
    let mut reg = Registry::default();
    for r in records {
        reg.apply(r);
    }
    reg
}

pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Opens (creating if needed) and replays the journal at `path`.
    pub fn open(path: &Path) -> Result<(Journal, Registry), RegistryError> {
        let io = |source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;
        let (records, valid) = parse_journal(&bytes);
        if valid < bytes.len() {
            log::warn!(
                "journal {}: ignoring {} torn bytes at the tail",
                path.display(),
                bytes.len() - valid
            );
            file.set_len(valid as u64).map_err(io)?;
        }
        Ok((
            Journal {
                path: path.to_path_buf(),
                file,
            },
            replay(&records),
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends records and syncs them to disk.
    pub fn append(&mut self, records: &[Record]) -> Result<(), RegistryError> {
        let mut buf = Vec::new();
        for r in records {
            buf.extend_from_slice(&r.encode());
        }
        let io = |source| RegistryError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(&buf).map_err(io)?;
        self.file.sync_data().map_err(io)
    }
}
