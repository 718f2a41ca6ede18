//! Reference interpreter for lambda programs.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::services::Services;
use super::store::FlatStore;
use super::types::*;
use crate::model::{Endpoint, HeaderSchema, MatchData};

/// Nested calls deeper than this trap. Validated programs are acyclic so
/// this only catches programs that skipped validation.
pub const MAX_CALL_DEPTH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Trap {
    DivByZero,
    OutOfBounds,
    Budget,
    /// Malformed program reached at runtime (unknown callee, bad constant...).
    Invalid,
}

impl Trap {
    pub fn code(self) -> u8 {
        match self {
            Trap::DivByZero => 1,
            Trap::OutOfBounds => 2,
            Trap::Budget => 3,
            Trap::Invalid => 4,
        }
    }

    /// Return code reported for a trapped request.
    pub fn rc(self) -> i32 {
        0xE0 + self.code() as i32
    }

    pub fn from_rc(rc: i32) -> Option<Trap> {
        [Trap::DivByZero, Trap::OutOfBounds, Trap::Budget, Trap::Invalid]
            .into_iter()
            .find(|t| t.rc() == rc)
    }
}

impl fmt::Display for Trap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trap::DivByZero => "division by zero",
            Trap::OutOfBounds => "out-of-bounds access",
            Trap::Budget => "instruction budget exceeded",
            Trap::Invalid => "invalid program",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emitted {
    pub endpoint: Endpoint,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub result: Result<i32, Trap>,
    /// Response bytes (empty when trapped).
    pub response: Vec<u8>,
    pub emitted: Vec<Emitted>,
    pub instructions: u64,
}

impl Execution {
    pub fn rc(&self) -> i32 {
        match self.result {
            Ok(rc) => rc,
            Err(t) => t.rc(),
        }
    }
}

/// Header bytes as presented to a lambda: the extracted application headers
/// plus the read-only `match` pseudo-header.
pub fn match_header(md: &MatchData) -> Vec<u8> {
    let mut v = Vec::with_capacity(8);
    v.extend_from_slice(&md.source.to_be_bytes());
    v.extend_from_slice(&md.payload_len.to_be_bytes());
    v
}

/// The reserved `match` schema: `src:4 len:4`.
pub fn match_schema() -> HeaderSchema {
    HeaderSchema::scalars(MATCH_SCHEMA, &[("src", 4), ("len", 4)]).expect("static schema")
}

/// Big-endian load of up to 8 bytes, truncated to 32 bits.
pub fn load_be(bytes: &[u8]) -> i32 {
    let mut v: u64 = 0;
    for b in bytes {
        v = (v << 8) | *b as u64;
    }
    v as u32 as i32
}

/// Big-endian store of the low `dst.len()` bytes of `value`.
pub fn store_be(dst: &mut [u8], value: i32) {
    let v = value as u32 as u64;
    let n = dst.len();
    for (i, b) in dst.iter_mut().enumerate() {
        let shift = 8 * (n - 1 - i);
        *b = if shift >= 64 { 0 } else { (v >> shift) as u8 };
    }
}

/// Effective byte range of an access, or `None` if it leaves `0..size`.
pub fn checked_range(base: i64, len: i64, size: usize) -> Option<std::ops::Range<usize>> {
    if base < 0 || len < 0 || base + len > size as i64 {
        return None;
    }
    Some(base as usize..(base + len) as usize)
}

pub fn memcpy_units(len: u32) -> u64 {
    (len as u64).div_ceil(8)
}

/// Interprets one lambda of an [`MLProgram`].
pub struct Interpreter<'a> {
    lambda: &'a LambdaProgram,
    shared: &'a [Function],
    schemas: Vec<HeaderSchema>,
    layout: HeaderLayout,
    budget: u64,
}

impl<'a> Interpreter<'a> {
    pub fn new(prog: &'a MLProgram, lambda: &'a LambdaProgram) -> Self {
        Self::with_shared(prog, lambda, &[])
    }

    /// `shared` holds helpers the lambda may CALL besides its own functions.
    pub fn with_shared(prog: &MLProgram, lambda: &'a LambdaProgram, shared: &'a [Function]) -> Self {
        let layout = HeaderLayout::new(&lambda.used_headers(shared), &prog.headers);
        let mut schemas = prog.headers.clone();
        schemas.push(match_schema());
        Interpreter {
            lambda,
            shared,
            schemas,
            layout,
            budget: DEFAULT_BUDGET,
        }
    }

    /// Uses a precomputed header layout instead of the lambda's own.
    pub fn with_layout(mut self, layout: HeaderLayout) -> Self {
        self.layout = layout;
        self
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn layout(&self) -> &HeaderLayout {
        &self.layout
    }

    pub fn run(
        &self,
        payload: &[u8],
        md: &MatchData,
        store: &mut FlatStore,
        services: &mut dyn Services,
    ) -> Execution {
        let mut headers: Vec<(String, Vec<u8>)> = self
            .layout
            .entries
            .iter()
            .zip(self.layout.extract(payload))
            .map(|((n, _, _), b)| (n.clone(), b))
            .collect();
        headers.push((MATCH_SCHEMA.to_string(), match_header(md)));
        let mut m = Machine {
            it: self,
            payload,
            headers,
            store,
            services,
            resp: Vec::new(),
            reply: Vec::new(),
            emitted: Vec::new(),
            count: 0,
        };
        let result = m.call(&self.lambda.entry, [0; NUM_REGS], 0);
        let response = if result.is_ok() {
            std::mem::take(&mut m.resp)
        } else {
            Vec::new()
        };
        Execution {
            result,
            response,
            emitted: m.emitted,
            instructions: m.count,
        }
    }
}

enum Exit {
    Ret([i32; NUM_REGS]),
    Halt(i32),
}

struct Machine<'m, 'a> {
    it: &'m Interpreter<'a>,
    payload: &'m [u8],
    headers: Vec<(String, Vec<u8>)>,
    store: &'m mut FlatStore,
    services: &'m mut dyn Services,
    resp: Vec<u8>,
    reply: Vec<u8>,
    emitted: Vec<Emitted>,
    count: u64,
}

impl Machine<'_, '_> {
    fn call(&mut self, name: &str, regs: [i32; NUM_REGS], depth: usize) -> Result<i32, Trap> {
        match self.exec(name, regs, depth)? {
            Exit::Ret(r) => Ok(r[0]),
            Exit::Halt(rc) => Ok(rc),
        }
    }

    fn lookup(&self, name: &str) -> Option<&Function> {
        let it = self.it;
        it.lambda
            .function(name)
            .or_else(|| it.shared.iter().find(|f| f.name == name))
    }

    fn charge(&mut self, units: u64) -> Result<(), Trap> {
        self.count += units;
        if self.count > self.it.budget {
            return Err(Trap::Budget);
        }
        Ok(())
    }

    fn schema_field(&self, fr: &FieldRef) -> Result<(usize, usize), Trap> {
        let s = self
            .it
            .schemas
            .iter()
            .find(|s| s.name() == fr.schema)
            .ok_or(Trap::Invalid)?;
        let (off, spec) = s.field(&fr.field).ok_or(Trap::Invalid)?;
        Ok((off, spec.width))
    }

    fn header_mut(&mut self, schema: &str) -> Result<&mut Vec<u8>, Trap> {
        self.headers
            .iter_mut()
            .find(|(n, _)| n == schema)
            .map(|(_, b)| b)
            .ok_or(Trap::Invalid)
    }

    fn addr(&self, m: &MemRef, regs: &[i32; NUM_REGS]) -> i64 {
        m.index.map_or(0, |r| regs[r.index()] as i64) + m.disp as i64
    }

    fn read(&mut self, region: &Region, base: i64, len: i64) -> Result<Vec<u8>, Trap> {
        let src: &[u8] = match region {
            Region::Global(g) => self.store.object(g).ok_or(Trap::Invalid)?,
            Region::Header(h) => self.header_mut(h)?.as_slice(),
            Region::Payload => self.payload,
            Region::Reply => &self.reply,
            Region::Resp => {
                let r = checked_range(base, len, RESP_CAPACITY as usize).ok_or(Trap::OutOfBounds)?;
                let mut out = vec![0u8; r.len()];
                let have = self.resp.len().min(r.end);
                if r.start < have {
                    out[..have - r.start].copy_from_slice(&self.resp[r.start..have]);
                }
                return Ok(out);
            }
        };
        let r = checked_range(base, len, src.len()).ok_or(Trap::OutOfBounds)?;
        Ok(src[r].to_vec())
    }

    fn write(&mut self, region: &Region, base: i64, data: &[u8]) -> Result<(), Trap> {
        let len = data.len() as i64;
        let dst: &mut [u8] = match region {
            Region::Global(g) => self.store.object_mut(g).ok_or(Trap::Invalid)?,
            Region::Header(h) => self.header_mut(h)?.as_mut_slice(),
            Region::Resp => {
                let r = checked_range(base, len, RESP_CAPACITY as usize).ok_or(Trap::OutOfBounds)?;
                if self.resp.len() < r.end {
                    self.resp.resize(r.end, 0);
                }
                self.resp[r].copy_from_slice(data);
                return Ok(());
            }
            Region::Payload | Region::Reply => return Err(Trap::Invalid),
        };
        let r = checked_range(base, len, dst.len()).ok_or(Trap::OutOfBounds)?;
        dst[r].copy_from_slice(data);
        Ok(())
    }

    fn guard_bound(&self, b: GuardBound) -> i64 {
        match b {
            GuardBound::Static(n) => n as i64,
            GuardBound::PayloadLen => self.payload.len() as i64,
            GuardBound::ReplyLen => self.reply.len() as i64,
        }
    }

    fn exec(&mut self, name: &str, mut regs: [i32; NUM_REGS], depth: usize) -> Result<Exit, Trap> {
        if depth >= MAX_CALL_DEPTH {
            return Err(Trap::Invalid);
        }
        let f = self.lookup(name).ok_or(Trap::Invalid)?.clone();
        let val = |regs: &[i32; NUM_REGS], o: &Operand| match o {
            Operand::Reg(r) => regs[r.index()],
            Operand::Imm(v) => *v,
        };
        let mut pc = 0usize;
        loop {
            let Some(ins) = f.instrs.get(pc) else {
                // fell off the end
                return Err(Trap::Invalid);
            };
            pc += 1;
            if !matches!(ins, Instr::Memcpy { .. }) {
                self.charge(1)?;
            }
            match ins {
                Instr::Const { rd, imm } => regs[rd.index()] = *imm,
                Instr::Mov { rd, rs } => regs[rd.index()] = regs[rs.index()],
                Instr::Alu { op, rd, ra, rb } => {
                    let b = val(&regs, rb);
                    regs[rd.index()] = op.eval(regs[ra.index()], b).ok_or(Trap::DivByZero)?;
                }
                Instr::MulShr { rd, ra, rb, shift } => {
                    regs[rd.index()] = mul_shr(regs[ra.index()], regs[rb.index()], *shift)
                }
                Instr::DivShl { rd, ra, rb, shift } => {
                    regs[rd.index()] = div_shl(regs[ra.index()], regs[rb.index()], *shift)
                        .ok_or(Trap::DivByZero)?
                }
                Instr::Jmp { target } => pc = *target,
                Instr::Br {
                    cond,
                    ra,
                    rb,
                    target,
                } => {
                    if cond.holds(regs[ra.index()], val(&regs, rb)) {
                        pc = *target;
                    }
                }
                Instr::Ldh { rd, field } => {
                    let (off, w) = self.schema_field(field)?;
                    let h = self.header_mut(&field.schema)?;
                    regs[rd.index()] = load_be(&h[off..off + w]);
                }
                Instr::Sth { field, rs } => {
                    if field.schema == MATCH_SCHEMA {
                        return Err(Trap::Invalid);
                    }
                    let (off, w) = self.schema_field(field)?;
                    let v = regs[rs.index()];
                    let h = self.header_mut(&field.schema)?;
                    store_be(&mut h[off..off + w], v);
                }
                Instr::Ldm { rd, width, addr } => {
                    let a = self.addr(addr, &regs);
                    let bytes = self.read(&addr.region, a, width.bytes() as i64)?;
                    regs[rd.index()] = load_be(&bytes);
                }
                Instr::Stm { addr, width, rs } => {
                    let a = self.addr(addr, &regs);
                    let mut buf = vec![0u8; width.bytes() as usize];
                    store_be(&mut buf, regs[rs.index()]);
                    self.write(&addr.region, a, &buf)?;
                }
                Instr::Memcpy { dst, src, len } => {
                    let n = val(&regs, len);
                    if n < 0 {
                        self.charge(1)?;
                        return Err(Trap::OutOfBounds);
                    }
                    self.charge(memcpy_units(n as u32))?;
                    let s = self.addr(src, &regs);
                    let d = self.addr(dst, &regs);
                    let data = self.read(&src.region, s, n as i64)?;
                    self.write(&dst.region, d, &data)?;
                }
                Instr::EmitPkt {
                    rd,
                    endpoint,
                    src,
                    len,
                } => {
                    let n = val(&regs, len);
                    let s = self.addr(src, &regs);
                    let data = self.read(&src.region, s, n as i64)?;
                    let reply = self.services.call(*endpoint, &data);
                    self.emitted.push(Emitted {
                        endpoint: *endpoint,
                        bytes: data,
                    });
                    regs[rd.index()] = reply.bytes.len() as i32;
                    self.reply = reply.bytes;
                }
                Instr::Call { func } => {
                    let mut callee = [0i32; NUM_REGS];
                    callee[..ABI_REGS as usize].copy_from_slice(&regs[..ABI_REGS as usize]);
                    match self.exec(func, callee, depth + 1)? {
                        Exit::Ret(r) => regs[0] = r[0],
                        Exit::Halt(rc) => return Ok(Exit::Halt(rc)),
                    }
                }
                Instr::Ret => return Ok(Exit::Ret(regs)),
                Instr::Halt { rc } => return Ok(Exit::Halt(val(&regs, rc))),
                Instr::FConst { rd, value } => {
                    regs[rd.index()] = to_fixed(*value).ok_or(Trap::Invalid)?
                }
                Instr::Float { op, rd, ra, rb } => {
                    let (a, b) = (regs[ra.index()], regs[rb.index()]);
                    regs[rd.index()] = match op {
                        FloatOp::Add => a.wrapping_add(b),
                        FloatOp::Sub => a.wrapping_sub(b),
                        FloatOp::Mul => mul_shr(a, b, FIXED_FRAC_BITS),
                        FloatOp::Div => div_shl(a, b, FIXED_FRAC_BITS).ok_or(Trap::DivByZero)?,
                    };
                }
                Instr::Guard {
                    index,
                    disp,
                    span,
                    bound,
                } => {
                    let base = index.map_or(0, |r| regs[r.index()] as i64) + *disp as i64;
                    let len = match span {
                        Span::Fixed(w) => *w as i64,
                        Span::Len(o) => val(&regs, o) as i64,
                    };
                    if checked_range(base, len, self.guard_bound(*bound).max(0) as usize).is_none() {
                        return Err(Trap::OutOfBounds);
                    }
                }
            }
        }
    }
}
