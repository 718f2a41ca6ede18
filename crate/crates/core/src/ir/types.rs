use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{Endpoint, HeaderSchema, WorkloadId};

pub const NUM_REGS: usize = 32;
/// r0..r7 are copied into a callee's fresh frame; r0 is copied back on RET.
pub const ABI_REGS: u8 = 8;
/// Capacity of the per-request response buffer.
pub const RESP_CAPACITY: u32 = 65_536;
pub const DEFAULT_BUDGET: u64 = 1_000_000;
/// Reserved header name exposing [`crate::model::MatchData`] to lambdas.
pub const MATCH_SCHEMA: &str = "match";

/// Lambda return codes understood by the match stage.
pub mod rc {
    pub const FORWARD: i32 = 0x10;
    pub const DROP: i32 = 0x11;
    pub const TO_HOST: i32 = 0x12;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Reg(pub u8);

impl Reg {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Reg(Reg),
    Imm(i32),
}

impl Operand {
    pub fn reg(self) -> Option<Reg> {
        match self {
            Operand::Reg(r) => Some(r),
            Operand::Imm(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    Div,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl AluOp {
    pub const ALL: [AluOp; 9] = [
        AluOp::Add,
        AluOp::Sub,
        AluOp::Mul,
        AluOp::Div,
        AluOp::And,
        AluOp::Or,
        AluOp::Xor,
        AluOp::Shl,
        AluOp::Shr,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::Mul => "mul",
            AluOp::Div => "div",
            AluOp::And => "and",
            AluOp::Or => "or",
            AluOp::Xor => "xor",
            AluOp::Shl => "shl",
            AluOp::Shr => "shr",
        }
    }

    /// 32-bit wrapping semantics. `None` on division by zero.
    pub fn eval(self, a: i32, b: i32) -> Option<i32> {
        Some(match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Mul => a.wrapping_mul(b),
            AluOp::Div => {
                if b == 0 {
                    return None;
                }
                a.wrapping_div(b)
            }
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
            AluOp::Shl => a.wrapping_shl(b as u32 & 31),
            AluOp::Shr => a.wrapping_shr(b as u32 & 31),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FloatOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl FloatOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            FloatOp::Add => "fadd",
            FloatOp::Sub => "fsub",
            FloatOp::Mul => "fmul",
            FloatOp::Div => "fdiv",
        }
    }
}

/// Q16.16 fraction bits used for float lowering.
pub const FIXED_FRAC_BITS: u8 = 16;

/// `(a * b) >> shift` through a 64-bit intermediate.
pub fn mul_shr(a: i32, b: i32, shift: u8) -> i32 {
    ((a as i64 * b as i64) >> shift) as i32
}

/// `(a << shift) / b` through a 64-bit intermediate. `None` on division by zero.
pub fn div_shl(a: i32, b: i32, shift: u8) -> Option<i32> {
    if b == 0 {
        return None;
    }
    Some((((a as i64) << shift) / b as i64) as i32)
}

/// Q16.16 encoding of `value`, rounded to nearest. `None` outside [-32768, 32768).
pub fn to_fixed(value: f64) -> Option<i32> {
    let scaled = (value * (1u32 << FIXED_FRAC_BITS) as f64).round();
    if !scaled.is_finite() || scaled < i32::MIN as f64 || scaled > i32::MAX as f64 {
        return None;
    }
    Some(scaled as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cond {
    Eq,
    Ne,
    Lt,
    Ge,
}

impl Cond {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Cond::Eq => "jeq",
            Cond::Ne => "jne",
            Cond::Lt => "jlt",
            Cond::Ge => "jge",
        }
    }

    pub fn holds(self, a: i32, b: i32) -> bool {
        match self {
            Cond::Eq => a == b,
            Cond::Ne => a != b,
            Cond::Lt => a < b,
            Cond::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Width {
    B1,
    B2,
    B4,
}

impl Width {
    pub fn bytes(self) -> u32 {
        match self {
            Width::B1 => 1,
            Width::B2 => 2,
            Width::B4 => 4,
        }
    }

    pub(crate) fn suffix(self) -> &'static str {
        match self {
            Width::B1 => "b",
            Width::B2 => "h",
            Width::B4 => "",
        }
    }
}

/// A memory space addressable by LDM/STM/MEMCPY/EMITPKT.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    /// A declared global object of the lambda.
    Global(String),
    /// The extracted copy of an application header.
    Header(String),
    /// The assembled request payload (application headers included). Read-only.
    Payload,
    /// The response buffer; its high-water mark is the response length.
    Resp,
    /// The reply to the most recent EMITPKT. Read-only.
    Reply,
}

impl Region {
    pub fn is_writable(&self) -> bool {
        !matches!(self, Region::Payload | Region::Reply)
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Global(g) => f.write_str(g),
            Region::Header(h) => write!(f, "hdr.{h}"),
            Region::Payload => f.write_str("payload"),
            Region::Resp => f.write_str("resp"),
            Region::Reply => f.write_str("reply"),
        }
    }
}

/// `[region + index + disp]`
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemRef {
    pub region: Region,
    pub index: Option<Reg>,
    pub disp: i32,
}

impl MemRef {
    pub fn constant(region: Region, disp: i32) -> Self {
        MemRef {
            region,
            index: None,
            disp,
        }
    }

    pub fn indexed(region: Region, index: Reg, disp: i32) -> Self {
        MemRef {
            region,
            index: Some(index),
            disp,
        }
    }
}

impl fmt::Display for MemRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}", self.region)?;
        if let Some(r) = self.index {
            write!(f, " + {r}")?;
        }
        if self.disp >= 0 {
            write!(f, " + {}]", self.disp)
        } else {
            write!(f, " - {}]", -(self.disp as i64))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FieldRef {
    pub schema: String,
    pub field: String,
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.schema, self.field)
    }
}

/// Upper bound a runtime guard checks against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GuardBound {
    Static(u32),
    PayloadLen,
    ReplyLen,
}

/// Bytes covered by a guarded access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Span {
    Fixed(u32),
    Len(Operand),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Instr {
    Const { rd: Reg, imm: i32 },
    Mov { rd: Reg, rs: Reg },
    Alu { op: AluOp, rd: Reg, ra: Reg, rb: Operand },
    /// Lowered fixed-point multiply.
    MulShr { rd: Reg, ra: Reg, rb: Reg, shift: u8 },
    /// Lowered fixed-point divide.
    DivShl { rd: Reg, ra: Reg, rb: Reg, shift: u8 },
    Jmp { target: usize },
    Br { cond: Cond, ra: Reg, rb: Operand, target: usize },
    Ldh { rd: Reg, field: FieldRef },
    Sth { field: FieldRef, rs: Reg },
    Ldm { rd: Reg, width: Width, addr: MemRef },
    Stm { addr: MemRef, width: Width, rs: Reg },
    Memcpy { dst: MemRef, src: MemRef, len: Operand },
    /// Synchronous RPC; `rd` receives the reply length.
    EmitPkt { rd: Reg, endpoint: Endpoint, src: MemRef, len: Operand },
    Call { func: String },
    Ret,
    Halt { rc: Operand },
    FConst { rd: Reg, value: f64 },
    Float { op: FloatOp, rd: Reg, ra: Reg, rb: Reg },
    /// Compiler-inserted bounds check: traps unless
    /// `0 <= index + disp` and `index + disp + span <= bound`.
    Guard { index: Option<Reg>, disp: i32, span: Span, bound: GuardBound },
}

impl Instr {
    pub fn is_float(&self) -> bool {
        matches!(self, Instr::FConst { .. } | Instr::Float { .. })
    }

    /// Control never falls through to the next instruction.
    pub fn is_terminator(&self) -> bool {
        matches!(self, Instr::Jmp { .. } | Instr::Ret | Instr::Halt { .. })
    }

    pub fn branch_target(&self) -> Option<usize> {
        match self {
            Instr::Jmp { target } | Instr::Br { target, .. } => Some(*target),
            _ => None,
        }
    }

    pub fn set_branch_target(&mut self, new: usize) {
        if let Instr::Jmp { target } | Instr::Br { target, .. } = self {
            *target = new;
        }
    }

    pub fn mem_refs(&self) -> Vec<&MemRef> {
        match self {
            Instr::Ldm { addr, .. } | Instr::Stm { addr, .. } => vec![addr],
            Instr::Memcpy { dst, src, .. } => vec![dst, src],
            Instr::EmitPkt { src, .. } => vec![src],
            _ => vec![],
        }
    }

    pub fn field_ref(&self) -> Option<&FieldRef> {
        match self {
            Instr::Ldh { field, .. } | Instr::Sth { field, .. } => Some(field),
            _ => None,
        }
    }

    /// Every register the instruction names, reads and writes alike.
    pub fn regs(&self) -> Vec<Reg> {
        let mut out = Vec::new();
        let op = |o: &Operand, out: &mut Vec<Reg>| {
            if let Operand::Reg(r) = o {
                out.push(*r)
            }
        };
        let mem = |m: &MemRef, out: &mut Vec<Reg>| {
            if let Some(r) = m.index {
                out.push(r)
            }
        };
        match self {
            Instr::Const { rd, .. } | Instr::FConst { rd, .. } | Instr::Ldh { rd, .. } => {
                out.push(*rd)
            }
            Instr::Mov { rd, rs } => out.extend([*rd, *rs]),
            Instr::Alu { rd, ra, rb, .. } => {
                out.extend([*rd, *ra]);
                op(rb, &mut out);
            }
            Instr::MulShr { rd, ra, rb, .. }
            | Instr::DivShl { rd, ra, rb, .. }
            | Instr::Float { rd, ra, rb, .. } => out.extend([*rd, *ra, *rb]),
            Instr::Jmp { .. } | Instr::Call { .. } | Instr::Ret => {}
            Instr::Br { ra, rb, .. } => {
                out.push(*ra);
                op(rb, &mut out);
            }
            Instr::Sth { rs, .. } => out.push(*rs),
            Instr::Ldm { rd, addr, .. } => {
                out.push(*rd);
                mem(addr, &mut out);
            }
            Instr::Stm { addr, rs, .. } => {
                mem(addr, &mut out);
                out.push(*rs);
            }
            Instr::Memcpy { dst, src, len } => {
                mem(dst, &mut out);
                mem(src, &mut out);
                op(len, &mut out);
            }
            Instr::EmitPkt { rd, src, len, .. } => {
                out.push(*rd);
                mem(src, &mut out);
                op(len, &mut out);
            }
            Instr::Halt { rc } => op(rc, &mut out),
            Instr::Guard { index, span, .. } => {
                out.extend(*index);
                if let Span::Len(l) = span {
                    op(l, &mut out);
                }
            }
        }
        out
    }

    /// Applies `f` to every register operand in place.
    pub fn map_regs(&mut self, mut f: impl FnMut(Reg) -> Reg) {
        let op = |o: &mut Operand, f: &mut dyn FnMut(Reg) -> Reg| {
            if let Operand::Reg(r) = o {
                *r = f(*r)
            }
        };
        let mem = |m: &mut MemRef, f: &mut dyn FnMut(Reg) -> Reg| {
            if let Some(r) = &mut m.index {
                *r = f(*r)
            }
        };
        match self {
            Instr::Const { rd, .. } | Instr::FConst { rd, .. } | Instr::Ldh { rd, .. } => {
                *rd = f(*rd)
            }
            Instr::Mov { rd, rs } => {
                *rd = f(*rd);
                *rs = f(*rs);
            }
            Instr::Alu { rd, ra, rb, .. } => {
                *rd = f(*rd);
                *ra = f(*ra);
                op(rb, &mut f);
            }
            Instr::MulShr { rd, ra, rb, .. }
            | Instr::DivShl { rd, ra, rb, .. }
            | Instr::Float { rd, ra, rb, .. } => {
                *rd = f(*rd);
                *ra = f(*ra);
                *rb = f(*rb);
            }
            Instr::Jmp { .. } | Instr::Call { .. } | Instr::Ret => {}
            Instr::Br { ra, rb, .. } => {
                *ra = f(*ra);
                op(rb, &mut f);
            }
            Instr::Sth { rs, .. } => *rs = f(*rs),
            Instr::Ldm { rd, addr, .. } => {
                *rd = f(*rd);
                mem(addr, &mut f);
            }
            Instr::Stm { addr, rs, .. } => {
                mem(addr, &mut f);
                *rs = f(*rs);
            }
            Instr::Memcpy { dst, src, len } => {
                mem(dst, &mut f);
                mem(src, &mut f);
                op(len, &mut f);
            }
            Instr::EmitPkt { rd, src, len, .. } => {
                *rd = f(*rd);
                mem(src, &mut f);
                op(len, &mut f);
            }
            Instr::Halt { rc } => op(rc, &mut f),
            Instr::Guard { index, span, .. } => {
                if let Some(r) = index {
                    *r = f(*r);
                }
                if let Span::Len(l) = span {
                    op(l, &mut f);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Function {
    pub name: String,
    pub instrs: Vec<Instr>,
}

impl Function {
    pub fn new(name: impl Into<String>, instrs: Vec<Instr>) -> Self {
        Function {
            name: name.into(),
            instrs,
        }
    }

    /// Highest register index named plus one.
    pub fn register_count(&self) -> usize {
        self.instrs
            .iter()
            .flat_map(Instr::regs)
            .map(|r| r.index() + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn callees(&self) -> impl Iterator<Item = &str> {
        self.instrs.iter().filter_map(|i| match i {
            Instr::Call { func } => Some(func.as_str()),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum Pragma {
    Hot,
    Cold,
    ReadOnly,
    #[default]
    None,
}

impl Pragma {
    pub fn keyword(self) -> &'static str {
        match self {
            Pragma::Hot => "hot",
            Pragma::Cold => "cold",
            Pragma::ReadOnly => "readonly",
            Pragma::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalObject {
    pub name: String,
    pub size: u32,
    pub pragma: Pragma,
    /// Initial bytes; the remainder of the object is zero.
    pub init: Vec<u8>,
}

impl GlobalObject {
    pub fn new(name: impl Into<String>, size: u32, pragma: Pragma) -> Self {
        GlobalObject {
            name: name.into(),
            size,
            pragma,
            init: Vec::new(),
        }
    }

    pub fn with_init(mut self, init: Vec<u8>) -> Self {
        self.init = init;
        self
    }

    /// Full initial image of `size` bytes.
    pub fn image(&self) -> Vec<u8> {
        let mut v = vec![0u8; self.size as usize];
        let n = self.init.len().min(v.len());
        v[..n].copy_from_slice(&self.init[..n]);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaProgram {
    pub name: String,
    pub entry: String,
    pub functions: Vec<Function>,
    pub globals: Vec<GlobalObject>,
}

impl LambdaProgram {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&GlobalObject> {
        self.globals.iter().find(|g| g.name == name)
    }

    pub fn uses_float(&self) -> bool {
        self.functions
            .iter()
            .any(|f| f.instrs.iter().any(Instr::is_float))
    }

    pub fn instruction_count(&self) -> usize {
        self.functions.iter().map(|f| f.instrs.len()).sum()
    }

    /// Functions reachable from the entry through calls, entry first.
    /// Calls into `shared` helpers are followed too.
    pub fn reachable<'a>(&'a self, shared: &'a [Function]) -> Vec<&'a Function> {
        let lookup = |name: &str| {
            self.function(name)
                .or_else(|| shared.iter().find(|f| f.name == name))
        };
        let mut seen = BTreeSet::new();
        let mut order = Vec::new();
        let mut stack = vec![self.entry.as_str()];
        while let Some(name) = stack.pop() {
            if !seen.insert(name) {
                continue;
            }
            if let Some(f) = lookup(name) {
                order.push(f);
                let mut callees: Vec<&str> = f.callees().collect();
                callees.reverse();
                stack.extend(callees);
            }
        }
        order
    }

    /// Header schemas touched by reachable code, `match` excluded.
    pub fn used_headers(&self, shared: &[Function]) -> BTreeSet<String> {
        let mut used = BTreeSet::new();
        for f in self.reachable(shared) {
            for i in &f.instrs {
                if let Some(fr) = i.field_ref() {
                    used.insert(fr.schema.clone());
                }
                for m in i.mem_refs() {
                    if let Region::Header(h) = &m.region {
                        used.insert(h.clone());
                    }
                }
            }
        }
        used.remove(MATCH_SCHEMA);
        used
    }
}

/// Where each extracted header sits in the request payload.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HeaderLayout {
    /// (schema name, byte offset, width) in schema declaration order.
    pub entries: Vec<(String, usize, usize)>,
}

impl HeaderLayout {
    /// Used headers are laid out back to back in the order the program declares them.
    pub fn new(used: &BTreeSet<String>, schemas: &[HeaderSchema]) -> Self {
        let mut off = 0;
        let mut entries = Vec::new();
        for s in schemas {
            if used.contains(s.name()) {
                entries.push((s.name().to_string(), off, s.total_width()));
                off += s.total_width();
            }
        }
        HeaderLayout { entries }
    }

    pub fn get(&self, schema: &str) -> Option<(usize, usize)> {
        self.entries
            .iter()
            .find(|(n, _, _)| n == schema)
            .map(|(_, o, w)| (*o, *w))
    }

    /// Copies each header out of `payload`, zero-filling past its end.
    pub fn extract(&self, payload: &[u8]) -> Vec<Vec<u8>> {
        self.entries
            .iter()
            .map(|(_, off, width)| extract_bytes(payload, *off, *width))
            .collect()
    }
}

pub fn extract_bytes(payload: &[u8], off: usize, width: usize) -> Vec<u8> {
    let mut v = vec![0u8; width];
    if off < payload.len() {
        let n = (payload.len() - off).min(width);
        v[..n].copy_from_slice(&payload[off..off + n]);
    }
    v
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRule {
    pub workload_id: WorkloadId,
    pub lambda: String,
}

/// Egress routing entry: responses to requests from `key` leave towards `egress`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Route {
    pub key: Endpoint,
    pub egress: Endpoint,
}

/// The match stage: workload-id dispatch rules plus each lambda's route table.
/// Unmatched requests go to the host.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchStage {
    pub rules: Vec<MatchRule>,
    pub routes: BTreeMap<String, Vec<Route>>,
}

impl MatchStage {
    /// Rule-list semantics: first rule with a matching id.
    pub fn dispatch(&self, wid: WorkloadId) -> Option<&str> {
        self.rules
            .iter()
            .find(|r| r.workload_id == wid)
            .map(|r| r.lambda.as_str())
    }
}

/// The unit the workload manager compiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLProgram {
    pub headers: Vec<HeaderSchema>,
    pub lambdas: Vec<LambdaProgram>,
    pub stage: MatchStage,
}

impl MLProgram {
    pub fn lambda(&self, name: &str) -> Option<&LambdaProgram> {
        self.lambdas.iter().find(|l| l.name == name)
    }

    pub fn schema(&self, name: &str) -> Option<&HeaderSchema> {
        self.headers.iter().find(|h| h.name() == name)
    }

    pub fn layout_for(&self, lambda: &LambdaProgram) -> HeaderLayout {
        HeaderLayout::new(&lambda.used_headers(&[]), &self.headers)
    }
}
