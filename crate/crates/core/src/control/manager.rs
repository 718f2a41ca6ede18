//! Workload manager: assigns ids, merges programs per node, compiles and
//! records deployments.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use super::registry::{Journal, JournalOp, Record, Registry, RegistryError};
use crate::compiler::{compile, CompileError, CompileOptions, CompileReport, Firmware};
use crate::emulator::NicModel;
use crate::ir::{MLProgram, MatchRule, MatchStage};
use crate::model::WorkloadId;

#[derive(Debug, Error)]
pub enum DeployError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("header `{0}` already deployed with a different layout")]
    HeaderConflict(String),
    #[error("no target nodes")]
    NoNodes,
}

/// Output of one deploy: per-node firmware and the name → id mapping.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub mapping: BTreeMap<String, WorkloadId>,
    pub firmware: BTreeMap<u16, Firmware>,
    pub reports: BTreeMap<u16, CompileReport>,
    /// Merged program per node, with rules carrying the assigned ids.
    pub programs: BTreeMap<u16, MLProgram>,
}

pub struct WorkloadManager {
    model: NicModel,
    opts: CompileOptions,
    registry: Registry,
    journal: Option<Journal>,
    assigned: BTreeMap<u16, MLProgram>,
}

fn empty_program() -> MLProgram {
    MLProgram {
        headers: Vec::new(),
        lambdas: Vec::new(),
        stage: MatchStage::default(),
    }
}

/// `new` layered over `base`: lambdas and routes with the same name replace
/// the old ones, headers must agree.
pub fn merge_programs(base: &MLProgram, new: &MLProgram) -> Result<MLProgram, DeployError> {
    let mut out = base.clone();
    for h in &new.headers {
        match out.headers.iter().find(|o| o.name() == h.name()) {
            Some(o) if o != h => return Err(DeployError::HeaderConflict(h.name().to_string())),
            Some(_) => {}
            None => out.headers.push(h.clone()),
        }
    }
    for l in &new.lambdas {
        match out.lambdas.iter_mut().find(|o| o.name == l.name) {
            Some(o) => *o = l.clone(),
            None => out.lambdas.push(l.clone()),
        }
        match new.stage.routes.get(&l.name) {
            Some(r) => {
                out.stage.routes.insert(l.name.clone(), r.clone());
            }
            None => {
                out.stage.routes.remove(&l.name);
            }
        }
    }
    Ok(out)
}

impl WorkloadManager {
    pub fn new(model: NicModel, opts: CompileOptions) -> Self {
        WorkloadManager {
            model,
            opts,
            registry: Registry::default(),
            journal: None,
            assigned: BTreeMap::new(),
        }
    }

    /// Restores the registry from the journal at `path`.
    pub fn with_journal(model: NicModel, opts: CompileOptions, path: &Path) -> Result<Self, DeployError> {
        let (journal, registry) = Journal::open(path)?;
        Ok(WorkloadManager {
            model,
            opts,
            registry,
            journal: Some(journal),
            assigned: BTreeMap::new(),
        })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn model(&self) -> &NicModel {
        &self.model
    }

    pub fn program_for(&self, node: u16) -> Option<&MLProgram> {
        self.assigned.get(&node)
    }

    /// Reinstates a node's merged program after a restart. Nothing is
    /// journaled; the registry already knows about its lambdas.
    pub fn restore(&mut self, node: u16, prog: MLProgram) {
        self.assigned.insert(node, prog);
    }

    pub fn nodes(&self) -> impl Iterator<Item = (u16, &MLProgram)> {
        self.assigned.iter().map(|(n, p)| (*n, p))
    }

    /// Compiles everything first; the registry and journal change only if
    /// every node's firmware builds.
    pub fn deploy(&mut self, prog: &MLProgram, nodes: &[u16]) -> Result<Deployment, DeployError> {
        if nodes.is_empty() {
            return Err(DeployError::NoNodes);
        }
        let nodes: BTreeSet<u16> = nodes.iter().copied().collect();
        let mut tentative = self.registry.clone();
        let mut records = Vec::new();
        for l in &prog.lambdas {
            if tentative.id_of(&l.name).is_none() {
                let r = tentative.alloc_record(&l.name);
                tentative.apply(&r);
                records.push(r);
            }
        }
        let mut dep = Deployment {
            mapping: BTreeMap::new(),
            firmware: BTreeMap::new(),
            reports: BTreeMap::new(),
            programs: BTreeMap::new(),
        };
        for &node in &nodes {
            let base = self.assigned.get(&node).cloned().unwrap_or_else(empty_program);
            let mut merged = merge_programs(&base, prog)?;
            merged.stage.rules = merged
                .lambdas
                .iter()
                .map(|l| MatchRule {
                    workload_id: tentative.id_of(&l.name).expect("allocated above"),
                    lambda: l.name.clone(),
                })
                .collect();
            let (fw, report) = compile(&merged, &self.model, &self.opts)?;
            dep.firmware.insert(node, fw);
            dep.reports.insert(node, report);
            dep.programs.insert(node, merged);
        }
        let first = *nodes.first().expect("non-empty");
        let digest = dep.firmware[&first].digest();
        for l in &prog.lambdas {
            let id = tentative.id_of(&l.name).expect("allocated above");
            let mut on: BTreeSet<u16> = tentative
                .get(&l.name)
                .map(|e| e.nodes.iter().copied().collect())
                .unwrap_or_default();
            on.extend(&nodes);
            let r = Record {
                op: JournalOp::Deploy,
                name: l.name.clone(),
                id,
                digest,
                nodes: on.into_iter().collect(),
            };
            tentative.apply(&r);
            records.push(r);
        }
        if let Some(j) = &mut self.journal {
            j.append(&records)?;
        }
        self.registry = tentative;
        for (node, p) in &dep.programs {
            self.assigned.insert(*node, p.clone());
        }
        for p in dep.programs.values() {
            for r in &p.stage.rules {
                dep.mapping.insert(r.lambda.clone(), r.workload_id);
            }
        }
        Ok(dep)
    }

    /// Marks `name` retired. Its id is never handed out again.
    pub fn retire(&mut self, name: &str) -> Result<(), DeployError> {
        let e = self
            .registry
            .get(name)
            .ok_or_else(|| RegistryError::Unknown(name.to_string()))?;
        let r = Record {
            op: JournalOp::Retire,
            name: name.to_string(),
            id: e.id,
            digest: e.digest,
            nodes: Vec::new(),
        };
        if let Some(j) = &mut self.journal {
            j.append(std::slice::from_ref(&r))?;
        }
        self.registry.apply(&r);
        Ok(())
    }
}
