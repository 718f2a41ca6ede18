use std::cmp::Reverse;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CompileError;
use crate::emulator::{NicModel, Tier};
use crate::ir::{LambdaProgram, Pragma, Region};

pub const PLACEMENT_ALIGN: u64 = 8;

/// Size cut-offs for objects without a placement pragma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    pub local_max: u32,
    pub ctm_max: u32,
    pub imem_max: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            local_max: 256,
            ctm_max: 8 << 10,
            imem_max: 1 << 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StratifyMode {
    /// Everything in EMEM.
    Naive,
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectInfo {
    pub lambda: String,
    pub name: String,
    pub size: u32,
    pub pragma: Pragma,
    /// Static count of instructions referencing the object.
    pub accesses: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub lambda: String,
    pub object: String,
    pub tier: Tier,
    pub base: u64,
    /// Bound in bytes (the object size).
    pub size: u32,
}

impl Placement {
    pub fn end(&self) -> u64 {
        self.base + self.size as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlacementMap {
    /// In placement order.
    pub entries: Vec<Placement>,
}

impl PlacementMap {
    pub fn get(&self, lambda: &str, object: &str) -> Option<&Placement> {
        self.entries
            .iter()
            .find(|p| p.lambda == lambda && p.object == object)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Bytes used per tier, alignment padding excluded.
    pub fn usage(&self, tier: Tier) -> u64 {
        self.entries
            .iter()
            .filter(|p| p.tier == tier)
            .map(|p| p.size as u64)
            .sum()
    }
}

/// Static count of instructions naming each global.
pub fn access_counts(lambda: &LambdaProgram) -> BTreeMap<String, u64> {
    let mut counts: BTreeMap<String, u64> = lambda.globals.iter().map(|g| (g.name.clone(), 0)).collect();
    for f in &lambda.functions {
        for i in &f.instrs {
            for m in i.mem_refs() {
                if let Region::Global(g) = &m.region {
                    *counts.entry(g.clone()).or_default() += 1;
                }
            }
        }
    }
    counts
}

pub fn objects_of(lambdas: &[LambdaProgram]) -> Vec<ObjectInfo> {
    let mut out = Vec::new();
    for l in lambdas {
        let counts = access_counts(l);
        for g in &l.globals {
            out.push(ObjectInfo {
                lambda: l.name.clone(),
                name: g.name.clone(),
                size: g.size,
                pragma: g.pragma,
                accesses: counts.get(&g.name).copied().unwrap_or(0),
            });
        }
    }
    out
}

struct Allocator {
    cursor: [u64; 4],
    end: [u64; 4],
}

impl Allocator {
    fn new(nic: &NicModel) -> Self {
        let r = Tier::ALL.map(|t| nic.object_range(t));
        Allocator {
            cursor: r.map(|(s, _)| s),
            end: r.map(|(_, e)| e),
        }
    }

    fn try_alloc(&mut self, tier: Tier, size: u32) -> Option<u64> {
        let i = tier.index();
        let base = self.cursor[i].next_multiple_of(PLACEMENT_ALIGN);
        if base + size as u64 > self.end[i] {
            return None;
        }
        self.cursor[i] = base + size as u64;
        Some(base)
    }
}

fn preferred(o: &ObjectInfo, th: &Thresholds) -> Tier {
    match o.pragma {
        Pragma::Hot => Tier::Local,
        Pragma::Cold => Tier::Emem,
        Pragma::ReadOnly | Pragma::None => {
            if o.size <= th.local_max {
                Tier::Local
            } else if o.size <= th.ctm_max {
                Tier::Ctm
            } else if o.size <= th.imem_max {
                Tier::Imem
            } else {
                Tier::Emem
            }
        }
    }
}

/// Places every object by pragma and size, most-accessed first, cascading
/// to the next larger tier on overflow.
pub fn stratify(objects: &[ObjectInfo], nic: &NicModel, th: &Thresholds) -> Result<PlacementMap, CompileError> {
    let mut order: Vec<&ObjectInfo> = objects.iter().collect();
    order.sort_by(|a, b| {
        (Reverse(a.accesses), &a.name, &a.lambda).cmp(&(Reverse(b.accesses), &b.name, &b.lambda))
    });
    let mut alloc = Allocator::new(nic);
    let mut map = PlacementMap::default();
    let mut unplaced = Vec::new();
    'objects: for o in order {
        let mut tier = Some(preferred(o, th));
        while let Some(t) = tier {
            if let Some(base) = alloc.try_alloc(t, o.size) {
                map.entries.push(Placement {
                    lambda: o.lambda.clone(),
                    object: o.name.clone(),
                    tier: t,
                    base,
                    size: o.size,
                });
                continue 'objects;
            }
            tier = t.next();
        }
        unplaced.push(format!("{}.{}", o.lambda, o.name));
    }
    if !unplaced.is_empty() {
        return Err(CompileError::Capacity { objects: unplaced });
    }
    Ok(map)
}

/// Declaration-order placement with everything in EMEM.
pub fn naive_placement(objects: &[ObjectInfo], nic: &NicModel) -> Result<PlacementMap, CompileError> {
    let mut alloc = Allocator::new(nic);
    let mut map = PlacementMap::default();
    let mut unplaced = Vec::new();
    for o in objects {
        match alloc.try_alloc(Tier::Emem, o.size) {
            Some(base) => map.entries.push(Placement {
                lambda: o.lambda.clone(),
                object: o.name.clone(),
                tier: Tier::Emem,
                base,
                size: o.size,
            }),
            None => unplaced.push(format!("{}.{}", o.lambda, o.name)),
        }
    }
    if !unplaced.is_empty() {
        return Err(CompileError::Capacity { objects: unplaced });
    }
    Ok(map)
}

pub fn stratify_program(
    lambdas: &[LambdaProgram],
    nic: &NicModel,
    mode: StratifyMode,
    th: &Thresholds,
) -> Result<PlacementMap, CompileError> {
    let objects = objects_of(lambdas);
    match mode {
        StratifyMode::Naive => naive_placement(&objects, nic),
        StratifyMode::Stratified => stratify(&objects, nic, th),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(name: &str, size: u32, pragma: Pragma, accesses: u64) -> ObjectInfo {
        ObjectInfo {
            lambda: "l".into(),
            name: name.into(),
            size,
            pragma,
            accesses,
        }
    }

    #[test]
    fn reference_placements() {
        let nic = NicModel::default();
        let objs = vec![
            obj("fill", 4096, Pragma::Hot, 9),
            obj("image", 64 << 10, Pragma::None, 3),
            obj("content", 1024, Pragma::Hot, 2),
        ];
        let m = stratify(&objs, &nic, &Thresholds::default()).unwrap();
        assert_eq!(m.get("l", "fill").unwrap().tier, Tier::Local);
        assert_eq!(m.get("l", "image").unwrap().tier, Tier::Imem);
        assert_eq!(m.get("l", "content").unwrap().tier, Tier::Ctm);
    }

    #[test]
    fn empty() {
        let m = stratify(&[], &NicModel::default(), &Thresholds::default()).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn cold_goes_far_and_overflow_errors() {
        let nic = NicModel {
            emem_bytes: 1 << 20,
            rdma_area_bytes: 1 << 19,
            imem_bytes: 1 << 18,
            ..NicModel::default()
        };
        let m = stratify(&[obj("c", 8, Pragma::Cold, 0)], &nic, &Thresholds::default()).unwrap();
        assert_eq!(m.entries[0].tier, Tier::Emem);
        let e = stratify(&[obj("big", 1 << 20, Pragma::None, 0)], &nic, &Thresholds::default());
        match e {
            Err(CompileError::Capacity { objects }) => assert_eq!(objects, vec!["l.big".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reserved_areas_respected() {
        let nic = NicModel::default();
        let m = stratify(&[obj("a", 1000, Pragma::None, 0)], &nic, &Thresholds::default()).unwrap();
        assert_eq!(m.entries[0].tier, Tier::Ctm);
        assert_eq!(m.entries[0].base, nic.system_area_bytes);
    }
}
