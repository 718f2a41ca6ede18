//! Static checks on Match+Lambda programs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::interp::match_schema;
use super::types::*;
use crate::model::HeaderSchema;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Location {
    pub lambda: Option<String>,
    pub function: Option<String>,
    pub instr: Option<usize>,
}

impl Location {
    fn program() -> Self {
        Location {
            lambda: None,
            function: None,
            instr: None,
        }
    }

    fn lambda(l: &str) -> Self {
        Location {
            lambda: Some(l.to_string()),
            function: None,
            instr: None,
        }
    }

    fn at(l: &str, f: &str, i: Option<usize>) -> Self {
        Location {
            lambda: Some(l.to_string()),
            function: Some(f.to_string()),
            instr: i,
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.lambda, &self.function, self.instr) {
            (None, _, _) => f.write_str("<program>"),
            (Some(l), None, _) => write!(f, "{l}"),
            (Some(l), Some(func), None) => write!(f, "{l}::{func}"),
            (Some(l), Some(func), Some(i)) => write!(f, "{l}::{func}#{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    /// Functions on the call cycle, in call order.
    Recursion(Vec<String>),
    MissingEntry(String),
    DuplicateFunction(String),
    DuplicateGlobal(String),
    ZeroSizedGlobal(String),
    UnknownFunction(String),
    UnknownGlobal(String),
    UnknownSchema(String),
    UnknownField(String),
    ArrayFieldAccess(String),
    ReadOnlyHeader(String),
    BranchOutOfRange(usize),
    FallsThrough,
    EmptyFunction,
    BadRegister(u8),
    OutOfBounds { region: String, offset: i64, len: i64, size: u32 },
    NegativeLength(i32),
    ReadOnlyWrite(String),
    DuplicateWorkloadId(u32),
    UnknownLambda(String),
    DuplicateLambda(String),
    DuplicateSchema(String),
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ViolationKind::*;
        match self {
            Recursion(c) => write!(f, "recursion through [{}]", c.join(", ")),
            MissingEntry(e) => write!(f, "entry function `{e}` not defined"),
            DuplicateFunction(n) => write!(f, "function `{n}` defined twice"),
            DuplicateGlobal(n) => write!(f, "global `{n}` declared twice"),
            ZeroSizedGlobal(n) => write!(f, "global `{n}` has size 0"),
            UnknownFunction(n) => write!(f, "call to undefined function `{n}`"),
            UnknownGlobal(n) => write!(f, "reference to undeclared global `{n}`"),
            UnknownSchema(n) => write!(f, "unknown header `{n}`"),
            UnknownField(n) => write!(f, "unknown header field `{n}`"),
            ArrayFieldAccess(n) => write!(f, "`{n}` is a byte array; use ldm/stm on hdr.*"),
            ReadOnlyHeader(n) => write!(f, "`{n}` is read-only"),
            BranchOutOfRange(t) => write!(f, "branch target {t} out of range"),
            FallsThrough => f.write_str("control falls off the end of the function"),
            EmptyFunction => f.write_str("empty function"),
            BadRegister(r) => write!(f, "register r{r} out of range"),
            OutOfBounds {
                region,
                offset,
                len,
                size,
            } => write!(
                f,
                "out-of-bounds access to `{region}`: bytes {offset}..{} of {size}",
                offset + len
            ),
            NegativeLength(n) => write!(f, "negative length {n}"),
            ReadOnlyWrite(r) => write!(f, "write to read-only `{r}`"),
            DuplicateWorkloadId(w) => write!(f, "workload id {w} matched twice"),
            UnknownLambda(l) => write!(f, "match stage references unknown lambda `{l}`"),
            DuplicateLambda(l) => write!(f, "lambda `{l}` defined twice"),
            DuplicateSchema(s) => write!(f, "header `{s}` declared twice"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: Location,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Lambdas containing float instructions.
    pub requires_lowering: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<Self, Vec<Violation>> {
        if self.is_ok() {
            Ok(self)
        } else {
            Err(self.violations)
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "error: {v}")?;
        }
        for l in &self.requires_lowering {
            writeln!(f, "note: {l}: float instructions require lowering")?;
        }
        Ok(())
    }
}

pub fn validate(prog: &MLProgram) -> ValidationReport {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for h in &prog.headers {
        if !seen.insert(h.name()) {
            out.push(Violation {
                location: Location::program(),
                kind: ViolationKind::DuplicateSchema(h.name().to_string()),
            });
        }
    }
    let mut names = BTreeSet::new();
    for l in &prog.lambdas {
        if !names.insert(l.name.as_str()) {
            out.push(Violation {
                location: Location::lambda(&l.name),
                kind: ViolationKind::DuplicateLambda(l.name.clone()),
            });
        }
        out.extend(validate_lambda(l, &prog.headers, &[]));
    }
    let mut wids = BTreeSet::new();
    for r in &prog.stage.rules {
        if !wids.insert(r.workload_id) {
            out.push(Violation {
                location: Location::program(),
                kind: ViolationKind::DuplicateWorkloadId(r.workload_id),
            });
        }
        if prog.lambda(&r.lambda).is_none() {
            out.push(Violation {
                location: Location::program(),
                kind: ViolationKind::UnknownLambda(r.lambda.clone()),
            });
        }
    }
    for name in prog.stage.routes.keys() {
        if prog.lambda(name).is_none() {
            out.push(Violation {
                location: Location::program(),
                kind: ViolationKind::UnknownLambda(name.clone()),
            });
        }
    }
    ValidationReport {
        violations: out,
        requires_lowering: prog
            .lambdas
            .iter()
            .filter(|l| l.uses_float())
            .map(|l| l.name.clone())
            .collect(),
    }
}

/// Checks one lambda. `shared` are helpers it may call besides its own functions.
pub fn validate_lambda(
    l: &LambdaProgram,
    headers: &[HeaderSchema],
    shared: &[Function],
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |location: Location, kind| out.push(Violation { location, kind });

    let mut fnames = BTreeSet::new();
    for f in &l.functions {
        if !fnames.insert(f.name.as_str()) {
            push(Location::lambda(&l.name), ViolationKind::DuplicateFunction(f.name.clone()));
        }
    }
    if l.function(&l.entry).is_none() {
        push(Location::lambda(&l.name), ViolationKind::MissingEntry(l.entry.clone()));
    }
    let mut gnames = BTreeSet::new();
    for g in &l.globals {
        if !gnames.insert(g.name.as_str()) {
            push(Location::lambda(&l.name), ViolationKind::DuplicateGlobal(g.name.clone()));
        }
        if g.size == 0 {
            push(Location::lambda(&l.name), ViolationKind::ZeroSizedGlobal(g.name.clone()));
        }
    }

    let ms = match_schema();
    let schema = |name: &str| -> Option<&HeaderSchema> {
        if name == MATCH_SCHEMA {
            Some(&ms)
        } else {
            headers.iter().find(|h| h.name() == name)
        }
    };
    let known_fn = |name: &str| {
        l.function(name).is_some() || shared.iter().any(|f| f.name == name)
    };

    // per-function checks, in name order so reports are stable under reordering
    let mut funcs: Vec<&Function> = l.functions.iter().collect();
    funcs.sort_by(|a, b| a.name.cmp(&b.name));
    for f in &funcs {
        let loc = |i: Option<usize>| Location::at(&l.name, &f.name, i);
        match f.instrs.last() {
            None => push(loc(None), ViolationKind::EmptyFunction),
            Some(last) if !last.is_terminator() => {
                push(loc(Some(f.instrs.len() - 1)), ViolationKind::FallsThrough)
            }
            _ => {}
        }
        for (idx, ins) in f.instrs.iter().enumerate() {
            let here = || loc(Some(idx));
            for r in ins.regs() {
                if r.index() >= NUM_REGS {
                    push(here(), ViolationKind::BadRegister(r.0));
                }
            }
            if let Some(t) = ins.branch_target() {
                if t >= f.instrs.len() {
                    push(here(), ViolationKind::BranchOutOfRange(t));
                }
            }
            if let Instr::Call { func } = ins {
                if !known_fn(func) {
                    push(here(), ViolationKind::UnknownFunction(func.clone()));
                }
            }
            if let Some(fr) = ins.field_ref() {
                match schema(&fr.schema) {
                    None => push(here(), ViolationKind::UnknownSchema(fr.schema.clone())),
                    Some(s) => match s.field(&fr.field) {
                        None => push(here(), ViolationKind::UnknownField(fr.to_string())),
                        Some((_, spec)) if spec.array => {
                            push(here(), ViolationKind::ArrayFieldAccess(fr.to_string()))
                        }
                        _ => {}
                    },
                }
                if matches!(ins, Instr::Sth { .. }) && fr.schema == MATCH_SCHEMA {
                    push(here(), ViolationKind::ReadOnlyHeader(fr.to_string()));
                }
            }
            // memory operands: (ref, constant length, is write)
            let mut accesses: Vec<(&MemRef, Option<i32>, bool)> = Vec::new();
            match ins {
                Instr::Ldm { addr, width, .. } => accesses.push((addr, Some(width.bytes() as i32), false)),
                Instr::Stm { addr, width, .. } => accesses.push((addr, Some(width.bytes() as i32), true)),
                Instr::Memcpy { dst, src, len } => {
                    let n = match len {
                        Operand::Imm(n) => Some(*n),
                        Operand::Reg(_) => None,
                    };
                    if let Some(n) = n.filter(|n| *n < 0) {
                        push(here(), ViolationKind::NegativeLength(n));
                    }
                    accesses.push((dst, n, true));
                    accesses.push((src, n, false));
                }
                Instr::EmitPkt { src, len, .. } => {
                    let n = match len {
                        Operand::Imm(n) => Some(*n),
                        Operand::Reg(_) => None,
                    };
                    if let Some(n) = n.filter(|n| *n < 0) {
                        push(here(), ViolationKind::NegativeLength(n));
                    }
                    accesses.push((src, n, false));
                }
                _ => {}
            }
            for (m, len, write) in accesses {
                let size: Option<u32> = match &m.region {
                    Region::Global(g) => match l.global(g) {
                        None => {
                            push(here(), ViolationKind::UnknownGlobal(g.clone()));
                            continue;
                        }
                        Some(obj) => {
                            if write && obj.pragma == Pragma::ReadOnly {
                                push(here(), ViolationKind::ReadOnlyWrite(g.clone()));
                            }
                            Some(obj.size)
                        }
                    },
                    Region::Header(h) => match schema(h) {
                        None => {
                            push(here(), ViolationKind::UnknownSchema(h.clone()));
                            continue;
                        }
                        Some(s) => {
                            if write && h == MATCH_SCHEMA {
                                push(here(), ViolationKind::ReadOnlyHeader(h.clone()));
                            }
                            Some(s.total_width() as u32)
                        }
                    },
                    Region::Resp => Some(RESP_CAPACITY),
                    Region::Payload | Region::Reply => {
                        if write {
                            push(here(), ViolationKind::ReadOnlyWrite(m.region.to_string()));
                        }
                        None
                    }
                };
                if let (Some(size), None, Some(len)) = (size, m.index, len) {
                    let (off, len) = (m.disp as i64, len.max(0) as i64);
                    if off < 0 || off + len > size as i64 {
                        push(
                            here(),
                            ViolationKind::OutOfBounds {
                                region: m.region.to_string(),
                                offset: off,
                                len,
                                size,
                            },
                        );
                    }
                }
            }
        }
    }

    for cycle in call_cycles(l, shared) {
        push(
            Location::at(&l.name, &cycle[0], None),
            ViolationKind::Recursion(cycle),
        );
    }
    out
}

/// Elementary cycles found by DFS from each function in name order, each
/// reported once starting at its smallest member.
fn call_cycles(l: &LambdaProgram, shared: &[Function]) -> Vec<Vec<String>> {
    let mut graph: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for f in l.functions.iter().chain(shared) {
        let e = graph.entry(f.name.as_str()).or_default();
        e.extend(f.callees());
    }
    let mut found: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut done: BTreeSet<&str> = BTreeSet::new();
    fn dfs<'g>(
        node: &'g str,
        graph: &BTreeMap<&'g str, Vec<&'g str>>,
        stack: &mut Vec<&'g str>,
        done: &mut BTreeSet<&'g str>,
        found: &mut BTreeSet<Vec<String>>,
    ) {
        if let Some(pos) = stack.iter().position(|n| *n == node) {
            let cyc = &stack[pos..];
            let min = (0..cyc.len()).min_by_key(|i| cyc[*i]).unwrap();
            let rotated: Vec<String> = cyc[min..]
                .iter()
                .chain(&cyc[..min])
                .map(|s| s.to_string())
                .collect();
            found.insert(rotated);
            return;
        }
        if done.contains(node) {
            return;
        }
        stack.push(node);
        if let Some(next) = graph.get(node) {
            for n in next {
                dfs(n, graph, stack, done, found);
            }
        }
        stack.pop();
        done.insert(node);
    }
    let nodes: Vec<&str> = graph.keys().copied().collect();
    for n in nodes {
        dfs(n, &graph, &mut Vec::new(), &mut done, &mut found);
    }
    found.into_iter().collect()
}
