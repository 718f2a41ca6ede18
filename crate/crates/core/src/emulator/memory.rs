//! Physical tier memories and the region tracker.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::nic_model::{NicModel, Tier};
use crate::compiler::{Firmware, Owner};

const PAGE: u64 = 4096;

/// Sparse byte-addressed memory; untouched bytes read as zero.
#[derive(Debug, Clone, Default)]
struct Sparse {
    pages: BTreeMap<u64, Box<[u8]>>,
}

impl Sparse {
    fn read(&self, addr: u64, out: &mut [u8]) {
        let mut done = 0usize;
        while done < out.len() {
            let a = addr + done as u64;
            let (page, off) = (a / PAGE, (a % PAGE) as usize);
            let n = (PAGE as usize - off).min(out.len() - done);
            match self.pages.get(&page) {
                Some(p) => out[done..done + n].copy_from_slice(&p[off..off + n]),
                None => out[done..done + n].fill(0),
            }
            done += n;
        }
    }

    fn write(&mut self, addr: u64, data: &[u8]) {
        let mut done = 0usize;
        while done < data.len() {
            let a = addr + done as u64;
            let (page, off) = (a / PAGE, (a % PAGE) as usize);
            let n = (PAGE as usize - off).min(data.len() - done);
            let p = self
                .pages
                .entry(page)
                .or_insert_with(|| vec![0u8; PAGE as usize].into_boxed_slice());
            p[off..off + n].copy_from_slice(&data[done..done + n]);
            done += n;
        }
    }
}

/// The four tiers as flat physical spaces.
#[derive(Debug, Clone)]
pub struct PhysMem {
    tiers: [Sparse; 4],
    capacity: [u64; 4],
}

impl PhysMem {
    pub fn new(model: &NicModel) -> Self {
        PhysMem {
            tiers: Default::default(),
            capacity: Tier::ALL.map(|t| model.capacity(t)),
        }
    }

    pub fn capacity(&self, t: Tier) -> u64 {
        self.capacity[t.index()]
    }

    pub fn in_range(&self, t: Tier, addr: i64, len: i64) -> bool {
        addr >= 0 && len >= 0 && (addr as u64).saturating_add(len as u64) <= self.capacity(t)
    }

    /// Panics outside the tier; callers check [`PhysMem::in_range`] first.
    pub fn read(&self, t: Tier, addr: u64, len: usize) -> Vec<u8> {
        assert!(self.in_range(t, addr as i64, len as i64), "read outside {t}");
        let mut v = vec![0u8; len];
        self.tiers[t.index()].read(addr, &mut v);
        v
    }

    pub fn write(&mut self, t: Tier, addr: u64, data: &[u8]) {
        assert!(self.in_range(t, addr as i64, data.len() as i64), "write outside {t}");
        self.tiers[t.index()].write(addr, data);
    }

    pub fn clear(&mut self) {
        self.tiers = Default::default();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub tier: Tier,
    pub start: u64,
    pub end: u64,
    pub owner: Owner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub owner: Owner,
    pub tier: Tier,
    pub addr: u64,
    pub len: u64,
    /// Owner of the touched region, `None` when outside every region.
    pub victim: Option<Owner>,
}

/// Checks every physical memory access against the placement: code of one
/// owner touching another owner's bytes (or unplaced bytes) is a violation.
#[derive(Debug, Clone, Default)]
pub struct RegionTracker {
    regions: Vec<Region>,
    pub accesses: u64,
    pub cross_owner: u64,
    pub unowned: u64,
    /// First few violations, for diagnostics.
    pub samples: Vec<Violation>,
}

const MAX_SAMPLES: usize = 32;

impl RegionTracker {
    pub fn for_firmware(fw: &Firmware, model: &NicModel) -> Self {
        let mut regions = Vec::new();
        for p in &fw.placement.entries {
            let Some(li) = fw.lambda_index(&p.lambda) else {
                continue;
            };
            regions.push(Region {
                tier: p.tier,
                start: p.base,
                end: p.end(),
                owner: Owner::Lambda(li),
            });
        }
        regions.push(Region {
            tier: Tier::Ctm,
            start: 0,
            end: model.system_area_bytes,
            owner: Owner::System,
        });
        regions.push(Region {
            tier: Tier::Emem,
            start: model.rdma_base(),
            end: model.emem_bytes,
            owner: Owner::System,
        });
        regions.sort_by_key(|r| (r.tier.index(), r.start));
        RegionTracker {
            regions,
            ..Default::default()
        }
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn violations(&self) -> u64 {
        self.cross_owner + self.unowned
    }

    pub fn record(&mut self, owner: Owner, tier: Tier, addr: u64, len: u64) {
        self.accesses += 1;
        if len == 0 {
            return;
        }
        let end = addr + len;
        let mut covered = addr;
        let mut bad: Option<Option<Owner>> = None;
        for r in self.regions.iter().filter(|r| r.tier == tier && r.start < end && addr < r.end) {
            if r.start > covered {
                bad.get_or_insert(None);
            }
            if r.owner != owner {
                bad = Some(Some(r.owner));
            }
            covered = covered.max(r.end);
        }
        if covered < end {
            bad.get_or_insert(None);
        }
        if let Some(victim) = bad {
            match victim {
                Some(_) => self.cross_owner += 1,
                None => self.unowned += 1,
            }
            if self.samples.len() < MAX_SAMPLES {
                self.samples.push(Violation {
                    owner,
                    tier,
                    addr,
                    len,
                    victim,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_spans_pages() {
        let mut m = PhysMem::new(&NicModel::default());
        let data: Vec<u8> = (0..10_000u32).map(|i| i as u8).collect();
        m.write(Tier::Imem, 4090, &data);
        assert_eq!(m.read(Tier::Imem, 4090, data.len()), data);
        assert_eq!(m.read(Tier::Imem, 0, 4), vec![0; 4]);
        assert!(!m.in_range(Tier::Local, 4095, 2));
        assert!(!m.in_range(Tier::Local, -1, 1));
    }

    #[test]
    fn tracker_flags_cross_and_unowned() {
        let mut t = RegionTracker {
            regions: vec![
                Region { tier: Tier::Ctm, start: 0, end: 8, owner: Owner::Lambda(0) },
                Region { tier: Tier::Ctm, start: 8, end: 16, owner: Owner::Lambda(1) },
            ],
            ..Default::default()
        };
        t.record(Owner::Lambda(0), Tier::Ctm, 0, 8);
        assert_eq!(t.violations(), 0);
        t.record(Owner::Lambda(0), Tier::Ctm, 4, 8);
        assert_eq!(t.cross_owner, 1);
        t.record(Owner::Lambda(1), Tier::Ctm, 12, 8);
        assert_eq!(t.unowned, 1);
        t.record(Owner::Lambda(1), Tier::Imem, 0, 1);
        assert_eq!(t.unowned, 2);
        assert_eq!(t.accesses, 4);
    }
}
