use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

/// SmartNIC memory tiers, nearest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Local,
    Ctm,
    Imem,
    Emem,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::Local, Tier::Ctm, Tier::Imem, Tier::Emem];

    pub fn name(self) -> &'static str {
        match self {
            Tier::Local => "LOCAL",
            Tier::Ctm => "CTM",
            Tier::Imem => "IMEM",
            Tier::Emem => "EMEM",
        }
    }

    /// Next larger tier, if any.
    pub fn next(self) -> Option<Tier> {
        match self {
            Tier::Local => Some(Tier::Ctm),
            Tier::Ctm => Some(Tier::Imem),
            Tier::Imem => Some(Tier::Emem),
            Tier::Emem => None,
        }
    }

    /// IMEM and EMEM need a bank-select op before each access.
    pub fn is_far(self) -> bool {
        matches!(self, Tier::Imem | Tier::Emem)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config: {0}")]
    Parse(String),
    #[error("invalid NIC model: {0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// The emulated device. Read from a flat `key = value` file; missing keys
/// take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NicModel {
    pub islands: u32,
    pub cores_per_island: u32,
    pub threads_per_core: u32,
    /// Instructions per core instruction store.
    pub instruction_store: usize,
    pub clock_hz: u64,
    pub local_bytes: u64,
    pub ctm_bytes: u64,
    pub imem_bytes: u64,
    pub emem_bytes: u64,
    /// Access latencies in cycles.
    pub local_latency: u64,
    pub ctm_latency: u64,
    pub imem_latency: u64,
    pub emem_latency: u64,
    pub wire_latency_ns: u64,
    pub mtu: usize,
    pub downtime_ns: u64,
    pub reassembly_timeout_ns: u64,
    /// Instructions charged per frame when reordering without RDMA.
    pub reorder_instructions_per_frame: u64,
    /// Lambda instruction cap per request.
    pub budget: u64,
    /// CTM bytes reserved for match-stage tables.
    pub system_area_bytes: u64,
    /// EMEM bytes reserved at the top for RDMA payloads.
    pub rdma_area_bytes: u64,
}

impl Default for NicModel {
    fn default() -> Self {
        NicModel {
            islands: 7,
            cores_per_island: 8,
            threads_per_core: 8,
            instruction_store: 16_384,
            clock_hz: 633_000_000,
            local_bytes: 4 << 10,
            ctm_bytes: 256 << 10,
            imem_bytes: 4 << 20,
            emem_bytes: 2 << 30,
            local_latency: 1,
            ctm_latency: 50,
            imem_latency: 150,
            emem_latency: 300,
            wire_latency_ns: 500,
            mtu: crate::model::DEFAULT_MTU,
            downtime_ns: 200_000_000,
            reassembly_timeout_ns: 10_000_000,
            reorder_instructions_per_frame: 30,
            budget: crate::ir::DEFAULT_BUDGET,
            system_area_bytes: 4 << 10,
            rdma_area_bytes: 64 << 20,
        }
    }
}

impl NicModel {
    pub fn from_kv_str(text: &str) -> Result<Self, ModelError> {
        let m: NicModel = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        m.check()?;
        Ok(m)
    }

    pub fn from_file(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_kv_str(&text)
    }

    pub fn to_kv_string(&self) -> String {
        toml::to_string(self).expect("flat struct serializes")
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Invalid(m.to_string()));
        if self.islands == 0
            || self.cores_per_island == 0
            || self.threads_per_core == 0
            || self.instruction_store == 0
            || self.clock_hz == 0
            || self.mtu <= crate::model::FRAME_HEADER_LEN
        {
            return bad("counts, clock and MTU payload must be positive");
        }
        let caps = Tier::ALL.map(|t| self.capacity(t));
        let lats = Tier::ALL.map(|t| self.latency(t));
        if caps[0] == 0 || caps.windows(2).any(|w| w[0] >= w[1]) {
            return bad("tier capacities must strictly increase LOCAL to EMEM");
        }
        if lats[0] == 0 || lats.windows(2).any(|w| w[0] >= w[1]) {
            return bad("tier latencies must strictly increase LOCAL to EMEM");
        }
        if self.system_area_bytes >= self.ctm_bytes || self.rdma_area_bytes >= self.emem_bytes {
            return bad("reserved areas exceed their tier");
        }
        Ok(())
    }

    pub fn cores(&self) -> u32 {
        self.islands * self.cores_per_island
    }

    pub fn threads(&self) -> u32 {
        self.cores() * self.threads_per_core
    }

    pub fn capacity(&self, t: Tier) -> u64 {
        match t {
            Tier::Local => self.local_bytes,
            Tier::Ctm => self.ctm_bytes,
            Tier::Imem => self.imem_bytes,
            Tier::Emem => self.emem_bytes,
        }
    }

    pub fn latency(&self, t: Tier) -> u64 {
        match t {
            Tier::Local => self.local_latency,
            Tier::Ctm => self.ctm_latency,
            Tier::Imem => self.imem_latency,
            Tier::Emem => self.emem_latency,
        }
    }

    /// Bytes of `t` available to lambda objects after reservations, as a
    /// half-open range.
    pub fn object_range(&self, t: Tier) -> (u64, u64) {
        match t {
            Tier::Ctm => (self.system_area_bytes, self.ctm_bytes),
            Tier::Emem => (0, self.emem_bytes - self.rdma_area_bytes),
            _ => (0, self.capacity(t)),
        }
    }

    pub fn rdma_base(&self) -> u64 {
        self.emem_bytes - self.rdma_area_bytes
    }

    pub fn cycles_to_time(&self, cycles: u64) -> SimTime {
        SimTime::from_cycles(cycles, self.clock_hz)
    }

    pub fn downtime(&self) -> SimTime {
        SimTime::from_nanos(self.downtime_ns)
    }

    pub fn wire_latency(&self) -> SimTime {
        SimTime::from_nanos(self.wire_latency_ns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let m = NicModel::default();
        m.check().unwrap();
        assert_eq!(m.cores(), 56);
        assert_eq!(m.threads(), 448);
        assert_eq!(m.object_range(Tier::Ctm), (4096, 262_144));
    }

    #[test]
    fn flat_config_overrides() {
        let m = NicModel::from_kv_str("islands = 1\ncores_per_island = 2\nctm_latency = 40\n").unwrap();
        assert_eq!(m.cores(), 2);
        assert_eq!(m.ctm_latency, 40);
        assert_eq!(m.emem_latency, 300);
        assert!(NicModel::from_kv_str("bogus = 1").is_err());
        assert!(NicModel::from_kv_str("imem_latency = 10").is_err());
        let round = NicModel::from_kv_str(&m.to_kv_string()).unwrap();
        assert_eq!(round, m);
    }
}
