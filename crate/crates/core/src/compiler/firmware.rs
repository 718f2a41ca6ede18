//! The per-core firmware instruction set and image.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::match_reduce::DecisionTree;
use super::parse_graph::ParseGraph;
use super::stratify::PlacementMap;
use crate::emulator::Tier;
use crate::ir::{AluOp, Cond, GuardBound, Operand, Reg, Span, Width};
use crate::model::{Endpoint, WorkloadId};

/// Where an op came from, for accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    /// Parser, match stage and route lookup.
    System,
    /// Translated 1:1 from a lambda instruction.
    Lambda,
    /// Added by the compiler inside lambda code (guards, bank selects).
    Inserted,
}

/// Physical address spaces visible to firmware.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    Mem(Tier),
    /// Per-thread extracted header area (LOCAL).
    Hdr,
    /// Per-request packet buffers.
    Payload,
    Resp,
    Reply,
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Space::Mem(t) => write!(f, "{t}"),
            Space::Hdr => f.write_str("hdr"),
            Space::Payload => f.write_str("pkt"),
            Space::Resp => f.write_str("resp"),
            Space::Reply => f.write_str("reply"),
        }
    }
}

/// `space[base + index + disp]`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhysRef {
    pub space: Space,
    pub base: u64,
    pub index: Option<Reg>,
    pub disp: i32,
}

impl fmt::Display for PhysRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{:#x}", self.space, self.base)?;
        if let Some(r) = self.index {
            write!(f, "+{r}")?;
        }
        if self.disp != 0 {
            write!(f, "{:+}", self.disp)?;
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Const { rd: Reg, imm: i32 },
    Mov { rd: Reg, rs: Reg },
    Alu { op: AluOp, rd: Reg, ra: Reg, rb: Operand },
    MulShr { rd: Reg, ra: Reg, rb: Reg, shift: u8 },
    DivShl { rd: Reg, ra: Reg, rb: Reg, shift: u8 },
    Jmp { target: usize },
    Br { cond: Cond, ra: Reg, rb: Operand, target: usize },
    /// Big-endian header field access in the hdr area.
    Ldh { rd: Reg, off: u32, width: u8 },
    Sth { off: u32, width: u8, rs: Reg },
    Ld { rd: Reg, width: Width, at: PhysRef },
    St { at: PhysRef, width: Width, rs: Reg },
    Copy { dst: PhysRef, src: PhysRef, len: Operand },
    Emit { rd: Reg, endpoint: Endpoint, src: PhysRef, len: Operand },
    Guard { index: Option<Reg>, disp: i32, span: Span, bound: GuardBound },
    /// Selects the bank register for a far-tier access.
    Bank { tier: Tier },
    /// Call with a fresh frame; r0..r7 copied in, r0 copied back.
    Call { target: usize },
    Ret,
    /// Lambda HALT: unwinds to the dispatcher with r0 = rc.
    Exit { rc: Operand },
    // dispatcher-only ops
    /// Copies `width` bytes of the payload at `from` into the hdr area at `to`, zero-filled.
    Extract { from: u32, to: u32, width: u32 },
    /// Enters lambda `lambda` at `target` with a zeroed frame; r0 receives its rc.
    Enter { lambda: u16, target: usize },
    /// Sends the response buffer towards the endpoint in `egress`.
    Respond { egress: Reg },
    /// Forwards the request to the host.
    ToHost,
    /// Ends the request.
    Finish,
}

impl Op {
    pub fn branch_target(&self) -> Option<usize> {
        match self {
            Op::Jmp { target } | Op::Br { target, .. } | Op::Call { target } | Op::Enter { target, .. } => {
                Some(*target)
            }
            _ => None,
        }
    }

    pub fn set_target(&mut self, new: usize) {
        match self {
            Op::Jmp { target } | Op::Br { target, .. } | Op::Call { target } | Op::Enter { target, .. } => {
                *target = new
            }
            _ => {}
        }
    }
}

fn opnd(o: &Operand) -> String {
    match o {
        Operand::Reg(r) => r.to_string(),
        Operand::Imm(v) => format!("#{v}"),
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Const { rd, imm } => write!(f, "const {rd}, #{imm}"),
            Op::Mov { rd, rs } => write!(f, "mov {rd}, {rs}"),
            Op::Alu { op, rd, ra, rb } => write!(f, "{} {rd}, {ra}, {}", op.mnemonic(), opnd(rb)),
            Op::MulShr { rd, ra, rb, shift } => write!(f, "mulshr {rd}, {ra}, {rb}, #{shift}"),
            Op::DivShl { rd, ra, rb, shift } => write!(f, "divshl {rd}, {ra}, {rb}, #{shift}"),
            Op::Jmp { target } => write!(f, "jmp @{target}"),
            Op::Br {
                cond,
                ra,
                rb,
                target,
            } => write!(f, "{} {ra}, {}, @{target}", cond.mnemonic(), opnd(rb)),
            Op::Ldh { rd, off, width } => write!(f, "ldh {rd}, hdr[{off}:{width}]"),
            Op::Sth { off, width, rs } => write!(f, "sth hdr[{off}:{width}], {rs}"),
            Op::Ld { rd, width, at } => write!(f, "ld{} {rd}, {at}", width.bytes()),
            Op::St { at, width, rs } => write!(f, "st{} {at}, {rs}", width.bytes()),
            Op::Copy { dst, src, len } => write!(f, "copy {dst}, {src}, {}", opnd(len)),
            Op::Emit {
                rd,
                endpoint,
                src,
                len,
            } => write!(f, "emit {rd}, #{endpoint}, {src}, {}", opnd(len)),
            Op::Guard {
                index,
                disp,
                span,
                bound,
            } => {
                let idx = index.map_or("_".to_string(), |r| r.to_string());
                let span = match span {
                    Span::Fixed(w) => format!("#{w}"),
                    Span::Len(o) => opnd(o),
                };
                let bound = match bound {
                    GuardBound::Static(b) => format!("#{b}"),
                    GuardBound::PayloadLen => "pkt.len".into(),
                    GuardBound::ReplyLen => "reply.len".into(),
                };
                write!(f, "guard {idx}{disp:+}, {span}, {bound}")
            }
            Op::Bank { tier } => write!(f, "bank {tier}"),
            Op::Call { target } => write!(f, "call @{target}"),
            Op::Ret => f.write_str("ret"),
            Op::Exit { rc } => write!(f, "exit {}", opnd(rc)),
            Op::Extract { from, to, width } => write!(f, "extract pkt[{from}], hdr[{to}], #{width}"),
            Op::Enter { lambda, target } => write!(f, "enter L{lambda}, @{target}"),
            Op::Respond { egress } => write!(f, "respond {egress}"),
            Op::ToHost => f.write_str("to_host"),
            Op::Finish => f.write_str("finish"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FwInstr {
    pub op: Op,
    pub origin: Origin,
}

/// Identity of the code currently running, for the region tracker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Owner {
    System,
    Lambda(u16),
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Owner::System => f.write_str("system"),
            Owner::Lambda(i) => write!(f, "lambda{i}"),
        }
    }
}

/// Initial bytes of a physical memory range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemImage {
    pub tier: Tier,
    pub base: u64,
    pub bytes: Vec<u8>,
    pub owner: Owner,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LambdaImage {
    pub name: String,
    /// Listing index of the entry function.
    pub entry: usize,
    /// Listing ranges of the lambda's own functions.
    pub functions: Vec<(String, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Firmware {
    pub opt_level: u8,
    pub listing: Vec<FwInstr>,
    /// Index of the dispatcher's first op.
    pub dispatch: usize,
    pub lambdas: Vec<LambdaImage>,
    /// Shared helper name → listing start.
    pub shared: Vec<(String, usize)>,
    pub parse_graph: ParseGraph,
    pub decision_tree: DecisionTree,
    pub placement: PlacementMap,
    pub images: Vec<MemImage>,
    /// Size of the per-thread header area.
    pub hdr_size: u32,
    /// Lambda name → workload ids, for the gateway.
    pub workload_ids: BTreeMap<String, Vec<WorkloadId>>,
}

impl Firmware {
    pub fn total_instructions(&self) -> usize {
        self.listing.len()
    }

    pub fn lambda_index(&self, name: &str) -> Option<u16> {
        self.lambdas.iter().position(|l| l.name == name).map(|i| i as u16)
    }

    pub fn count_by_origin(&self, origin: Origin) -> usize {
        self.listing.iter().filter(|i| i.origin == origin).count()
    }

    /// Human-readable listing, one op per line.
    pub fn listing_text(&self) -> String {
        let mut labels: BTreeMap<usize, String> = BTreeMap::new();
        labels.insert(self.dispatch, "dispatch".into());
        for (name, at) in &self.shared {
            labels.insert(*at, name.clone());
        }
        for l in &self.lambdas {
            for (f, start, _) in &l.functions {
                labels.insert(*start, format!("{}::{f}", l.name));
            }
        }
        let mut out = String::new();
        for (i, ins) in self.listing.iter().enumerate() {
            if let Some(l) = labels.get(&i) {
                let _ = writeln!(out, "{l}:");
            }
            let tag = match ins.origin {
                Origin::System => 's',
                Origin::Lambda => ' ',
                Origin::Inserted => '+',
            };
            let _ = writeln!(out, "{i:6} {tag} {}", ins.op);
        }
        out
    }

    /// SHA-256 over the listing text and memory images.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.listing_text().as_bytes());
        for img in &self.images {
            h.update([img.tier as u8]);
            h.update(img.base.to_be_bytes());
            h.update((img.bytes.len() as u64).to_be_bytes());
            h.update(&img.bytes);
        }
        h.finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        self.digest().iter().map(|b| format!("{b:02x}")).collect()
    }
}
