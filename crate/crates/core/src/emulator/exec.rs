//! Runs one request through the firmware on one thread.

use serde::{Deserialize, Serialize};

use super::memory::{PhysMem, RegionTracker};
use super::nic_model::{NicModel, Tier};
use crate::compiler::{Firmware, Op, Origin, Owner, PhysRef, Space};
use crate::ir::{
    checked_range, div_shl, extract_bytes, load_be, match_header, memcpy_units, mul_shr, store_be,
    Emitted, GuardBound, Operand, Services, Span, Trap, MAX_CALL_DEPTH, NUM_REGS, RESP_CAPACITY,
};
use crate::model::{Endpoint, MatchData, WorkloadId};
use crate::time::SimTime;

pub struct Request<'a> {
    pub workload_id: WorkloadId,
    pub payload: &'a [u8],
    /// The payload sits in the EMEM RDMA area rather than CTM.
    pub rdma: bool,
    pub md: MatchData,
}

/// How the dispatcher finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Exit {
    Respond { egress: Endpoint },
    Drop,
    ToHost,
    Trap(Trap),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecResult {
    pub exit: Exit,
    /// Lambda return code (trap rc when trapped); `None` if no lambda ran.
    pub rc: Option<i32>,
    pub lambda: Option<u16>,
    /// Response buffer; empty when trapped.
    pub response: Vec<u8>,
    pub emitted: Vec<Emitted>,
    pub cycles: u64,
    pub instructions: u64,
    /// Instructions charged against the lambda budget.
    pub lambda_instructions: u64,
    /// Time spent waiting on EMITPKT replies.
    pub io_wait: SimTime,
}

struct Frame {
    ret: usize,
    regs: [i32; NUM_REGS],
    enter: bool,
}

pub struct Executor<'a> {
    pub fw: &'a Firmware,
    pub model: &'a NicModel,
    pub mem: &'a mut PhysMem,
    pub tracker: &'a mut RegionTracker,
    pub services: &'a mut dyn Services,
}

struct State<'r> {
    req: &'r Request<'r>,
    regs: [i32; NUM_REGS],
    stack: Vec<Frame>,
    owner: Owner,
    depth: usize,
    hdr: Vec<u8>,
    resp: Vec<u8>,
    reply: Vec<u8>,
    emitted: Vec<Emitted>,
    cycles: u64,
    instructions: u64,
    lambda_instructions: u64,
    io_wait: SimTime,
    rc: Option<i32>,
    lambda: Option<u16>,
}

fn val(regs: &[i32; NUM_REGS], o: &Operand) -> i32 {
    match o {
        Operand::Reg(r) => regs[r.index()],
        Operand::Imm(v) => *v,
    }
}

impl Executor<'_> {
    fn latency(&self, s: Space, rdma: bool) -> u64 {
        let m = self.model;
        match s {
            Space::Mem(t) => m.latency(t),
            Space::Hdr => m.latency(Tier::Local),
            Space::Payload if rdma => m.latency(Tier::Emem),
            Space::Payload | Space::Resp | Space::Reply => m.latency(Tier::Ctm),
        }
    }

    fn addr(st: &State, r: &PhysRef) -> i64 {
        r.base as i64 + r.index.map_or(0, |x| st.regs[x.index()] as i64) + r.disp as i64
    }

    fn read(&mut self, st: &mut State, r: &PhysRef, len: i64) -> Result<Vec<u8>, Trap> {
        let a = Self::addr(st, r);
        let src: &[u8] = match r.space {
            Space::Mem(t) => {
                if !self.mem.in_range(t, a, len) {
                    return Err(Trap::OutOfBounds);
                }
                self.tracker.record(st.owner, t, a as u64, len as u64);
                return Ok(self.mem.read(t, a as u64, len as usize));
            }
            Space::Resp => {
                let rg = checked_range(a, len, RESP_CAPACITY as usize).ok_or(Trap::OutOfBounds)?;
                let mut out = vec![0u8; rg.len()];
                let have = st.resp.len().min(rg.end);
                if rg.start < have {
                    out[..have - rg.start].copy_from_slice(&st.resp[rg.start..have]);
                }
                return Ok(out);
            }
            Space::Hdr => &st.hdr,
            Space::Payload => st.req.payload,
            Space::Reply => &st.reply,
        };
        let rg = checked_range(a, len, src.len()).ok_or(Trap::OutOfBounds)?;
        Ok(src[rg].to_vec())
    }

    fn write(&mut self, st: &mut State, r: &PhysRef, data: &[u8]) -> Result<(), Trap> {
        let a = Self::addr(st, r);
        let len = data.len() as i64;
        match r.space {
            Space::Mem(t) => {
                if !self.mem.in_range(t, a, len) {
                    return Err(Trap::OutOfBounds);
                }
                self.tracker.record(st.owner, t, a as u64, len as u64);
                self.mem.write(t, a as u64, data);
            }
            Space::Resp => {
                let rg = checked_range(a, len, RESP_CAPACITY as usize).ok_or(Trap::OutOfBounds)?;
                if st.resp.len() < rg.end {
                    st.resp.resize(rg.end, 0);
                }
                st.resp[rg].copy_from_slice(data);
            }
            Space::Hdr => {
                let rg = checked_range(a, len, st.hdr.len()).ok_or(Trap::OutOfBounds)?;
                st.hdr[rg].copy_from_slice(data);
            }
            Space::Payload | Space::Reply => return Err(Trap::Invalid),
        }
        Ok(())
    }

    fn copy_cost(&self, units: u64, lat: u64) -> u64 {
        (units * (1 + lat.div_ceil(8))).max(1)
    }

    pub fn run(&mut self, req: &Request) -> ExecResult {
        let hdr_size = self.fw.hdr_size as usize;
        let mut hdr = vec![0u8; hdr_size];
        let mh = match_header(&req.md);
        hdr[hdr_size - mh.len()..].copy_from_slice(&mh);
        let mut st = State {
            req,
            regs: [0; NUM_REGS],
            stack: Vec::new(),
            owner: Owner::System,
            depth: 0,
            hdr,
            resp: Vec::new(),
            reply: Vec::new(),
            emitted: Vec::new(),
            cycles: 0,
            instructions: 0,
            lambda_instructions: 0,
            io_wait: SimTime::ZERO,
            rc: None,
            lambda: None,
        };
        st.regs[1] = req.workload_id as i32;
        st.regs[2] = req.md.source as i32;
        let exit = match self.exec(&mut st) {
            Ok(e) => e,
            Err(t) => {
                st.rc = Some(t.rc());
                st.resp.clear();
                Exit::Trap(t)
            }
        };
        ExecResult {
            exit,
            rc: st.rc,
            lambda: st.lambda,
            response: st.resp,
            emitted: st.emitted,
            cycles: st.cycles,
            instructions: st.instructions,
            lambda_instructions: st.lambda_instructions,
            io_wait: st.io_wait,
        }
    }

    fn exec(&mut self, st: &mut State) -> Result<Exit, Trap> {
        let fw = self.fw;
        let budget = self.model.budget;
        let mut pc = fw.dispatch;
        loop {
            let ins = fw.listing.get(pc).ok_or(Trap::Invalid)?;
            pc += 1;
            let units = match &ins.op {
                Op::Copy { len, .. } => {
                    let n = val(&st.regs, len);
                    if n < 0 {
                        1
                    } else {
                        memcpy_units(n as u32)
                    }
                }
                _ => 1,
            };
            st.instructions += units;
            if ins.origin == Origin::Lambda {
                st.lambda_instructions += units;
                if st.lambda_instructions > budget {
                    return Err(Trap::Budget);
                }
            }
            st.cycles += 1;
            let rdma = st.req.rdma;
            match &ins.op {
                Op::Const { rd, imm } => st.regs[rd.index()] = *imm,
                Op::Mov { rd, rs } => st.regs[rd.index()] = st.regs[rs.index()],
                Op::Alu { op, rd, ra, rb } => {
                    let b = val(&st.regs, rb);
                    st.regs[rd.index()] = op.eval(st.regs[ra.index()], b).ok_or(Trap::DivByZero)?;
                }
                Op::MulShr { rd, ra, rb, shift } => {
                    st.regs[rd.index()] = mul_shr(st.regs[ra.index()], st.regs[rb.index()], *shift)
                }
                Op::DivShl { rd, ra, rb, shift } => {
                    st.regs[rd.index()] =
                        div_shl(st.regs[ra.index()], st.regs[rb.index()], *shift).ok_or(Trap::DivByZero)?
                }
                Op::Jmp { target } => pc = *target,
                Op::Br {
                    cond,
                    ra,
                    rb,
                    target,
                } => {
                    if cond.holds(st.regs[ra.index()], val(&st.regs, rb)) {
                        pc = *target;
                    }
                }
                Op::Ldh { rd, off, width } => {
                    st.cycles += self.model.latency(Tier::Local);
                    let (o, w) = (*off as usize, *width as usize);
                    let b = st.hdr.get(o..o + w).ok_or(Trap::Invalid)?;
                    st.regs[rd.index()] = load_be(b);
                }
                Op::Sth { off, width, rs } => {
                    st.cycles += self.model.latency(Tier::Local);
                    let (o, w) = (*off as usize, *width as usize);
                    let v = st.regs[rs.index()];
                    let b = st.hdr.get_mut(o..o + w).ok_or(Trap::Invalid)?;
                    store_be(b, v);
                }
                Op::Ld { rd, width, at } => {
                    st.cycles += self.latency(at.space, rdma);
                    let b = self.read(st, at, width.bytes() as i64)?;
                    st.regs[rd.index()] = load_be(&b);
                }
                Op::St { at, width, rs } => {
                    st.cycles += self.latency(at.space, rdma);
                    let mut b = vec![0u8; width.bytes() as usize];
                    store_be(&mut b, st.regs[rs.index()]);
                    self.write(st, at, &b)?;
                }
                Op::Copy { dst, src, len } => {
                    let n = val(&st.regs, len);
                    if n < 0 {
                        return Err(Trap::OutOfBounds);
                    }
                    let lat = self.latency(dst.space, rdma).max(self.latency(src.space, rdma));
                    st.cycles += self.copy_cost(units, lat) - 1;
                    let data = self.read(st, src, n as i64)?;
                    self.write(st, dst, &data)?;
                }
                Op::Emit {
                    rd,
                    endpoint,
                    src,
                    len,
                } => {
                    let n = val(&st.regs, len);
                    let data = self.read(st, src, n as i64)?;
                    let reply = self.services.call(*endpoint, &data);
                    st.io_wait += reply.latency;
                    st.emitted.push(Emitted {
                        endpoint: *endpoint,
                        bytes: data,
                    });
                    st.regs[rd.index()] = reply.bytes.len() as i32;
                    st.reply = reply.bytes;
                }
                Op::Guard {
                    index,
                    disp,
                    span,
                    bound,
                } => {
                    let a = index.map_or(0, |r| st.regs[r.index()] as i64) + *disp as i64;
                    let n = match span {
                        Span::Fixed(n) => *n as i64,
                        Span::Len(o) => val(&st.regs, o) as i64,
                    };
                    let b = match bound {
                        GuardBound::Static(b) => *b as i64,
                        GuardBound::PayloadLen => st.req.payload.len() as i64,
                        GuardBound::ReplyLen => st.reply.len() as i64,
                    };
                    if a < 0 || n < 0 || a + n > b {
                        return Err(Trap::OutOfBounds);
                    }
                }
                Op::Bank { .. } => {}
                Op::Call { target } => {
                    if st.owner != Owner::System {
                        st.depth += 1;
                        if st.depth >= MAX_CALL_DEPTH {
                            return Err(Trap::Invalid);
                        }
                    }
                    let mut regs = [0; NUM_REGS];
                    regs[..8].copy_from_slice(&st.regs[..8]);
                    st.stack.push(Frame {
                        ret: pc,
                        regs: std::mem::replace(&mut st.regs, regs),
                        enter: false,
                    });
                    pc = *target;
                }
                Op::Ret => {
                    let f = st.stack.pop().ok_or(Trap::Invalid)?;
                    let r0 = st.regs[0];
                    st.regs = f.regs;
                    st.regs[0] = r0;
                    pc = f.ret;
                    if f.enter {
                        st.owner = Owner::System;
                        st.rc = Some(r0);
                    } else if st.owner != Owner::System {
                        st.depth -= 1;
                    }
                }
                Op::Exit { rc } => {
                    if st.owner == Owner::System {
                        return Err(Trap::Invalid);
                    }
                    let rc = val(&st.regs, rc);
                    loop {
                        let f = st.stack.pop().ok_or(Trap::Invalid)?;
                        if f.enter {
                            st.regs = f.regs;
                            st.regs[0] = rc;
                            pc = f.ret;
                            break;
                        }
                    }
                    st.owner = Owner::System;
                    st.rc = Some(rc);
                }
                Op::Extract { from, to, width } => {
                    let lat = self.latency(Space::Payload, rdma).max(self.model.latency(Tier::Local));
                    st.cycles += self.copy_cost(memcpy_units(*width), lat) - 1;
                    let bytes = extract_bytes(st.req.payload, *from as usize, *width as usize);
                    let (o, w) = (*to as usize, *width as usize);
                    st.hdr.get_mut(o..o + w).ok_or(Trap::Invalid)?.copy_from_slice(&bytes);
                }
                Op::Enter { lambda, target } => {
                    st.stack.push(Frame {
                        ret: pc,
                        regs: std::mem::replace(&mut st.regs, [0; NUM_REGS]),
                        enter: true,
                    });
                    st.owner = Owner::Lambda(*lambda);
                    st.lambda = Some(*lambda);
                    st.depth = 0;
                    pc = *target;
                }
                Op::Respond { egress } => {
                    return Ok(Exit::Respond {
                        egress: st.regs[egress.index()] as u32,
                    })
                }
                Op::ToHost => return Ok(Exit::ToHost),
                Op::Finish => return Ok(Exit::Drop),
            }
        }
    }
}
