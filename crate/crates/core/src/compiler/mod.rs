//! Compiles an [`MLProgram`] into NIC firmware.
//!
//! Per lambda: fixed-point lowering, then (at `-O1`) coalescing across
//! lambdas, memory placement, isolation guards and code generation.

mod codegen;
mod coalesce;
mod firmware;
mod guards;
mod lower;
mod match_reduce;
mod parse_graph;
mod stratify;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emulator::NicModel;
use crate::ir::{validate, Function, LambdaProgram, MLProgram, Violation};

pub use codegen::{R_EGRESS, R_RC, R_SRC, R_WID, SYSTEM_AREA_BASE};
pub use coalesce::{
    canonical_registers, coalesce, eliminate_dead_code, CoalesceReport, Coalesced, SharedHelper,
    SHARED_PREFIX,
};
pub use firmware::{
    Firmware, FwInstr, LambdaImage, MemImage, Op, Origin, Owner, PhysRef, Space,
};
pub use guards::insert_isolation_guards;
pub use lower::lower_fixed_point;
pub use match_reduce::{reduce_match, DecisionTree, ROUTE_ROW_BYTES};
pub use parse_graph::{
    hdr_area, infer_parse_graph, Extraction, HdrArea, ParseBranch, ParseGraph, ParseNode,
};
pub use stratify::{
    access_counts, naive_placement, objects_of, stratify, stratify_program, ObjectInfo,
    Placement, PlacementMap, StratifyMode, Thresholds, PLACEMENT_ALIGN,
};

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("validation failed:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<Violation>),
    #[error("{lambda}::{function}@{instr}: constant {value} outside Q16.16 range")]
    FixedPointRange {
        lambda: String,
        function: String,
        instr: usize,
        value: f64,
    },
    #[error("workload id {0} matched by more than one rule")]
    DuplicateWorkloadId(u32),
    #[error("out of NIC memory placing {}", objects.join(", "))]
    Capacity { objects: Vec<String> },
    #[error("route tables need {needed} bytes, system area holds {available}")]
    SystemArea { needed: u64, available: u64 },
    #[error("firmware has {total} instructions, instruction store holds {capacity}")]
    InstructionStore { total: usize, capacity: usize },
    #[error("{lambda}::{function}@{instr}: access always outside {region}")]
    StaticViolation {
        lambda: String,
        function: String,
        instr: usize,
        region: String,
    },
    #[error("{lambda}: object {object} has no placement")]
    Unplaced { lambda: String, object: String },
    #[error("internal compiler error: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileOptions {
    /// 0: naive translation. 1: coalescing, match reduction, stratification.
    pub opt_level: u8,
    /// Insert isolation guards. Turning this off is only useful for
    /// showing what the region tracker catches.
    pub guards: bool,
    pub thresholds: Thresholds,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions::opt(1)
    }
}

impl CompileOptions {
    pub fn opt(level: u8) -> Self {
        CompileOptions {
            opt_level: level,
            guards: true,
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassStats {
    pub pass: String,
    /// Firmware instructions with this and all earlier passes enabled.
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileReport {
    pub opt_level: u8,
    pub passes: Vec<PassStats>,
    pub coalesce: Option<CoalesceReport>,
    pub placement: PlacementMap,
    pub guards: usize,
    pub bank_selects: usize,
    pub requires_lowering: Vec<String>,
    pub warnings: Vec<String>,
    pub digest: String,
}

impl CompileReport {
    pub fn final_total(&self) -> usize {
        self.passes.last().map_or(0, |p| p.total)
    }

    pub fn pass(&self, name: &str) -> Option<usize> {
        self.passes.iter().find(|p| p.pass == name).map(|p| p.total)
    }

    /// `pass<TAB>total<TAB>delta` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("pass\ttotal\tdelta\n");
        let mut prev = None;
        for p in &self.passes {
            let delta = prev.map_or(0, |v: usize| p.total as i64 - v as i64);
            let _ = writeln!(out, "{}\t{}\t{delta}", p.pass, p.total);
            prev = Some(p.total);
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "opt level {}", self.opt_level);
        for p in &self.passes {
            let _ = writeln!(out, "  {:<24} {:>7}", p.pass, p.total);
        }
        if let Some(c) = &self.coalesce {
            let _ = writeln!(
                out,
                "coalescing: {} -> {} lambda instructions, {} shared helpers, {} dead functions",
                c.before,
                c.after,
                c.shared.len(),
                c.dead_functions.len()
            );
        }
        let _ = writeln!(out, "guards {}, bank selects {}", self.guards, self.bank_selects);
        for p in &self.placement.entries {
            let _ = writeln!(out, "  {}.{} -> {} @{:#x} ({} B)", p.lambda, p.object, p.tier, p.base, p.size);
        }
        if !self.requires_lowering.is_empty() {
            let _ = writeln!(out, "lowered to fixed point: {}", self.requires_lowering.join(", "));
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        let _ = writeln!(out, "digest {}", self.digest);
        out
    }
}

pub const PASS_NAIVE: &str = "naive";
pub const PASS_COALESCE: &str = "coalescing";
pub const PASS_MATCH: &str = "match reduction";
pub const PASS_STRATIFY: &str = "memory stratification";

#[derive(Clone, Copy)]
struct Passes {
    coalesce: bool,
    reduce: bool,
    stratify: bool,
}

fn build(
    prog: &MLProgram,
    lowered: &[LambdaProgram],
    nic: &NicModel,
    opts: &CompileOptions,
    passes: Passes,
) -> Result<(Firmware, Option<CoalesceReport>), CompileError> {
    let (lambdas, shared, report): (Vec<LambdaProgram>, Vec<Function>, _) = if passes.coalesce {
        let c = coalesce(lowered);
        (c.lambdas, c.shared, Some(c.report))
    } else {
        (lowered.to_vec(), Vec::new(), None)
    };
    let mode = if passes.stratify {
        StratifyMode::Stratified
    } else {
        StratifyMode::Naive
    };
    let placement = stratify_program(&lambdas, nic, mode, &opts.thresholds)?;
    let (lambdas, shared) = if opts.guards {
        let ls = lambdas
            .iter()
            .map(|l| insert_isolation_guards(l, &placement, &prog.headers))
            .collect::<Result<Vec<_>, _>>()?;
        let holder = LambdaProgram {
            name: SHARED_PREFIX.to_string(),
            entry: String::new(),
            functions: shared,
            globals: Vec::new(),
        };
        let sh = insert_isolation_guards(&holder, &placement, &prog.headers)?.functions;
        (ls, sh)
    } else {
        (lambdas, shared)
    };
    let tree = reduce_match(&prog.stage)?;
    let graph = infer_parse_graph(prog);
    let area = hdr_area(prog);
    let fw = codegen::generate(&codegen::CodegenInput {
        prog,
        lambdas: &lambdas,
        shared: &shared,
        placement: &placement,
        tree: &tree,
        parse_graph: &graph,
        area: &area,
        reduced_routes: passes.reduce,
        nic,
        opt_level: opts.opt_level,
    })?;
    Ok((fw, report))
}

/// Validates, lowers and compiles `prog`. At `-O1` the report carries the
/// firmware size with each optimization enabled in turn.
pub fn compile(
    prog: &MLProgram,
    nic: &NicModel,
    opts: &CompileOptions,
) -> Result<(Firmware, CompileReport), CompileError> {
    let vr = validate(prog).into_result().map_err(CompileError::Validation)?;
    let lowered = prog
        .lambdas
        .iter()
        .map(lower_fixed_point)
        .collect::<Result<Vec<_>, _>>()?;
    let schedule: &[(&str, Passes)] = if opts.opt_level == 0 {
        &[(
            PASS_NAIVE,
            Passes {
                coalesce: false,
                reduce: false,
                stratify: false,
            },
        )]
    } else {
        &[
            (
                PASS_NAIVE,
                Passes {
                    coalesce: false,
                    reduce: false,
                    stratify: false,
                },
            ),
            (
                PASS_COALESCE,
                Passes {
                    coalesce: true,
                    reduce: false,
                    stratify: false,
                },
            ),
            (
                PASS_MATCH,
                Passes {
                    coalesce: true,
                    reduce: true,
                    stratify: false,
                },
            ),
            (
                PASS_STRATIFY,
                Passes {
                    coalesce: true,
                    reduce: true,
                    stratify: true,
                },
            ),
        ]
    };
    let mut stats = Vec::new();
    let mut last = None;
    for (i, (name, passes)) in schedule.iter().enumerate() {
        let built = build(prog, &lowered, nic, opts, *passes);
        let built = match built {
            // an intermediate configuration may not fit where the final one does
            Err(CompileError::Capacity { .. }) if i + 1 < schedule.len() => continue,
            other => other?,
        };
        stats.push(PassStats {
            pass: name.to_string(),
            total: built.0.total_instructions(),
        });
        last = Some(built);
    }
    let (fw, coalesce_report) = last.ok_or_else(|| CompileError::Internal("no pass ran".into()))?;
    if fw.total_instructions() > nic.instruction_store {
        return Err(CompileError::InstructionStore {
            total: fw.total_instructions(),
            capacity: nic.instruction_store,
        });
    }
    let report = CompileReport {
        opt_level: opts.opt_level,
        passes: stats,
        coalesce: coalesce_report,
        placement: fw.placement.clone(),
        guards: fw
            .listing
            .iter()
            .filter(|i| matches!(i.op, Op::Guard { .. }))
            .count(),
        bank_selects: fw
            .listing
            .iter()
            .filter(|i| matches!(i.op, Op::Bank { .. }))
            .count(),
        requires_lowering: vr.requires_lowering,
        warnings: fw.parse_graph.warnings.clone(),
        digest: fw.digest_hex(),
    };
    Ok((fw, report))
}
