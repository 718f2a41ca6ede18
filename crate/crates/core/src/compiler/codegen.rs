//! Linearizes the dispatcher, route lookup, shared helpers and lambda bodies.

use std::collections::BTreeMap;

use super::firmware::*;
use super::match_reduce::{DecisionTree, ROUTE_ROW_BYTES};
use super::parse_graph::{HdrArea, ParseGraph};
use super::stratify::PlacementMap;
use super::CompileError;
use crate::emulator::{NicModel, Tier};
use crate::ir::{
    match_schema, rc, AluOp, Cond, Function, Instr, LambdaProgram, MLProgram, MemRef, Operand, Reg,
    Region, Width, MATCH_SCHEMA,
};

/// Dispatcher register conventions.
pub const R_RC: Reg = Reg(0);
pub const R_WID: Reg = Reg(1);
pub const R_SRC: Reg = Reg(2);
pub const R_EGRESS: Reg = Reg(5);

/// Route table base in CTM.
pub const SYSTEM_AREA_BASE: u64 = 0;

pub(crate) struct CodegenInput<'a> {
    pub prog: &'a MLProgram,
    pub lambdas: &'a [LambdaProgram],
    pub shared: &'a [Function],
    pub placement: &'a PlacementMap,
    pub tree: &'a DecisionTree,
    pub parse_graph: &'a ParseGraph,
    pub area: &'a HdrArea,
    /// Emit one parameterized route routine instead of one per lambda.
    pub reduced_routes: bool,
    pub nic: &'a NicModel,
    pub opt_level: u8,
}

struct Emitter {
    code: Vec<FwInstr>,
}

impl Emitter {
    fn push(&mut self, op: Op, origin: Origin) -> usize {
        self.code.push(FwInstr { op, origin });
        self.code.len() - 1
    }

    fn sys(&mut self, op: Op) -> usize {
        self.push(op, Origin::System)
    }

    fn here(&self) -> usize {
        self.code.len()
    }

    fn patch(&mut self, at: usize, target: usize) {
        self.code[at].op.set_target(target);
    }
}

/// Route lookup body: r2 = src, r3/r4 = byte range of rows; r0 = egress.
fn emit_route_loop(e: &mut Emitter) {
    let start = e.here();
    e.sys(Op::Mov { rd: R_RC, rs: R_SRC });
    let test = e.sys(Op::Br {
        cond: Cond::Ge,
        ra: Reg(3),
        rb: Operand::Reg(Reg(4)),
        target: 0,
    });
    let row = |disp| PhysRef {
        space: Space::Mem(Tier::Ctm),
        base: SYSTEM_AREA_BASE,
        index: Some(Reg(3)),
        disp,
    };
    e.sys(Op::Ld {
        rd: Reg(6),
        width: Width::B4,
        at: row(0),
    });
    let miss = e.sys(Op::Br {
        cond: Cond::Ne,
        ra: Reg(6),
        rb: Operand::Reg(R_SRC),
        target: 0,
    });
    e.sys(Op::Ld {
        rd: R_RC,
        width: Width::B4,
        at: row(4),
    });
    e.sys(Op::Ret);
    let next = e.sys(Op::Alu {
        op: AluOp::Add,
        rd: Reg(3),
        ra: Reg(3),
        rb: Operand::Imm(ROUTE_ROW_BYTES as i32),
    });
    e.sys(Op::Jmp { target: start + 1 });
    let done = e.sys(Op::Ret);
    e.patch(test, done);
    e.patch(miss, next);
}

fn range_consts(e: &mut Emitter, (s, end): (u32, u32)) {
    e.sys(Op::Const {
        rd: Reg(3),
        imm: (s * ROUTE_ROW_BYTES) as i32,
    });
    e.sys(Op::Const {
        rd: Reg(4),
        imm: (end * ROUTE_ROW_BYTES) as i32,
    });
}

struct FnTranslation {
    ops: Vec<FwInstr>,
    /// (op index, callee name) to resolve.
    calls: Vec<(usize, String)>,
}

fn phys(
    m: &MemRef,
    lambda: Option<&str>,
    placement: &PlacementMap,
    area: &HdrArea,
) -> Result<PhysRef, CompileError> {
    let (space, base) = match &m.region {
        Region::Global(g) => {
            let l = lambda.ok_or_else(|| CompileError::Internal(format!("shared helper touches global {g}")))?;
            let p = placement.get(l, g).ok_or_else(|| CompileError::Unplaced {
                lambda: l.to_string(),
                object: g.clone(),
            })?;
            (Space::Mem(p.tier), p.base)
        }
        Region::Header(h) => (
            Space::Hdr,
            area.offset(h)
                .ok_or_else(|| CompileError::Internal(format!("no header slot for {h}")))? as u64,
        ),
        Region::Payload => (Space::Payload, 0),
        Region::Resp => (Space::Resp, 0),
        Region::Reply => (Space::Reply, 0),
    };
    Ok(PhysRef {
        space,
        base,
        index: m.index,
        disp: m.disp,
    })
}

fn translate(
    f: &Function,
    lambda: Option<&str>,
    input: &CodegenInput,
) -> Result<FnTranslation, CompileError> {
    let mut ops: Vec<FwInstr> = Vec::with_capacity(f.instrs.len());
    let mut calls = Vec::new();
    let mut first = Vec::with_capacity(f.instrs.len() + 1);
    let ms = match_schema();
    let lam = |op| FwInstr {
        op,
        origin: Origin::Lambda,
    };
    let bank = |ops: &mut Vec<FwInstr>, r: &PhysRef| {
        if let Space::Mem(t) = r.space {
            if t.is_far() {
                ops.push(FwInstr {
                    op: Op::Bank { tier: t },
                    origin: Origin::Inserted,
                });
            }
        }
    };
    let phys = |m: &MemRef| phys(m, lambda, input.placement, input.area);
    for ins in &f.instrs {
        first.push(ops.len());
        match ins {
            Instr::Const { rd, imm } => ops.push(lam(Op::Const { rd: *rd, imm: *imm })),
            Instr::Mov { rd, rs } => ops.push(lam(Op::Mov { rd: *rd, rs: *rs })),
            Instr::Alu { op, rd, ra, rb } => ops.push(lam(Op::Alu {
                op: *op,
                rd: *rd,
                ra: *ra,
                rb: *rb,
            })),
            Instr::MulShr { rd, ra, rb, shift } => ops.push(lam(Op::MulShr {
                rd: *rd,
                ra: *ra,
                rb: *rb,
                shift: *shift,
            })),
            Instr::DivShl { rd, ra, rb, shift } => ops.push(lam(Op::DivShl {
                rd: *rd,
                ra: *ra,
                rb: *rb,
                shift: *shift,
            })),
            Instr::Jmp { target } => ops.push(lam(Op::Jmp { target: *target })),
            Instr::Br {
                cond,
                ra,
                rb,
                target,
            } => ops.push(lam(Op::Br {
                cond: *cond,
                ra: *ra,
                rb: *rb,
                target: *target,
            })),
            Instr::Ldh { field, .. } | Instr::Sth { field, .. } => {
                let schema = if field.schema == MATCH_SCHEMA {
                    &ms
                } else {
                    input
                        .prog
                        .schema(&field.schema)
                        .ok_or_else(|| CompileError::Internal(format!("unknown header {}", field.schema)))?
                };
                let (foff, spec) = schema
                    .field(&field.field)
                    .ok_or_else(|| CompileError::Internal(format!("unknown field {field}")))?;
                let base = input
                    .area
                    .offset(&field.schema)
                    .ok_or_else(|| CompileError::Internal(format!("no header slot for {}", field.schema)))?;
                let off = base + foff as u32;
                let width = spec.width as u8;
                ops.push(lam(match ins {
                    Instr::Ldh { rd, .. } => Op::Ldh { rd: *rd, off, width },
                    Instr::Sth { rs, .. } => Op::Sth { off, width, rs: *rs },
                    _ => unreachable!(),
                }));
            }
            Instr::Ldm { rd, width, addr } => {
                let at = phys(addr)?;
                bank(&mut ops, &at);
                ops.push(lam(Op::Ld {
                    rd: *rd,
                    width: *width,
                    at,
                }));
            }
            Instr::Stm { addr, width, rs } => {
                let at = phys(addr)?;
                bank(&mut ops, &at);
                ops.push(lam(Op::St {
                    at,
                    width: *width,
                    rs: *rs,
                }));
            }
            Instr::Memcpy { dst, src, len } => {
                let (d, s) = (phys(dst)?, phys(src)?);
                bank(&mut ops, &d);
                bank(&mut ops, &s);
                ops.push(lam(Op::Copy {
                    dst: d,
                    src: s,
                    len: *len,
                }));
            }
            Instr::EmitPkt {
                rd,
                endpoint,
                src,
                len,
            } => {
                let s = phys(src)?;
                bank(&mut ops, &s);
                ops.push(lam(Op::Emit {
                    rd: *rd,
                    endpoint: *endpoint,
                    src: s,
                    len: *len,
                }));
            }
            Instr::Call { func } => {
                calls.push((ops.len(), func.clone()));
                ops.push(lam(Op::Call { target: 0 }));
            }
            Instr::Ret => ops.push(lam(Op::Ret)),
            Instr::Halt { rc } => ops.push(lam(Op::Exit { rc: *rc })),
            Instr::Guard {
                index,
                disp,
                span,
                bound,
            } => ops.push(FwInstr {
                op: Op::Guard {
                    index: *index,
                    disp: *disp,
                    span: *span,
                    bound: *bound,
                },
                origin: Origin::Inserted,
            }),
            Instr::FConst { .. } | Instr::Float { .. } => {
                return Err(CompileError::Internal(format!(
                    "float instruction survived lowering in {}",
                    f.name
                )))
            }
        }
    }
    first.push(ops.len());
    for op in &mut ops {
        if matches!(op.op, Op::Jmp { .. } | Op::Br { .. }) {
            let t = op.op.branch_target().unwrap();
            op.op.set_target(first[t]);
        }
    }
    Ok(FnTranslation { ops, calls })
}

pub(crate) fn generate(input: &CodegenInput) -> Result<Firmware, CompileError> {
    let prog = input.prog;
    let tree = input.tree;
    let lambda_index: BTreeMap<&str, u16> = input
        .lambdas
        .iter()
        .enumerate()
        .map(|(i, l)| (l.name.as_str(), i as u16))
        .collect();
    let reduced = input.reduced_routes && tree.table_count() > 1;

    let mut e = Emitter { code: Vec::new() };
    // dispatcher: r1 = workload id, r2 = source endpoint
    let dispatch = e.here();
    let mut rule_branches = Vec::new();
    for (wid, _) in &tree.chain {
        rule_branches.push(e.sys(Op::Br {
            cond: Cond::Eq,
            ra: R_WID,
            rb: Operand::Imm(*wid as i32),
            target: 0,
        }));
    }
    e.sys(Op::ToHost);

    let mut enters = Vec::new(); // (op index, lambda name)
    let mut route_calls = Vec::new(); // (op index, lambda name)
    let mut shared_route_calls = Vec::new();
    let mut post_jumps = Vec::new();
    for (k, (wid, lname)) in tree.chain.iter().enumerate() {
        let at = e.here();
        e.patch(rule_branches[k], at);
        if let Some(b) = input.parse_graph.branch(*wid) {
            for x in &b.extractions {
                let n = &input.parse_graph.nodes[x.node];
                e.sys(Op::Extract {
                    from: x.payload_offset,
                    to: n.hdr_offset,
                    width: n.width,
                });
            }
        }
        let range = tree.range(lname);
        if range.0 == range.1 {
            e.sys(Op::Mov {
                rd: R_EGRESS,
                rs: R_SRC,
            });
        } else {
            if reduced {
                range_consts(&mut e, range);
                shared_route_calls.push(e.sys(Op::Call { target: 0 }));
            } else {
                route_calls.push((e.sys(Op::Call { target: 0 }), lname.clone()));
            }
            e.sys(Op::Mov {
                rd: R_EGRESS,
                rs: R_RC,
            });
        }
        let li = *lambda_index
            .get(lname.as_str())
            .ok_or_else(|| CompileError::Internal(format!("rule names unknown lambda {lname}")))?;
        enters.push((e.sys(Op::Enter { lambda: li, target: 0 }), lname.clone()));
        post_jumps.push(e.sys(Op::Jmp { target: 0 }));
    }
    let post = e.here();
    for j in post_jumps {
        e.patch(j, post);
    }
    let to_host = e.sys(Op::Br {
        cond: Cond::Eq,
        ra: R_RC,
        rb: Operand::Imm(rc::TO_HOST),
        target: 0,
    });
    let drop = e.sys(Op::Br {
        cond: Cond::Eq,
        ra: R_RC,
        rb: Operand::Imm(rc::DROP),
        target: 0,
    });
    e.sys(Op::Respond { egress: R_EGRESS });
    let fin = e.sys(Op::Finish);
    let host = e.sys(Op::ToHost);
    e.patch(to_host, host);
    e.patch(drop, fin);

    // route lookup routines
    if reduced {
        let at = e.here();
        emit_route_loop(&mut e);
        for c in shared_route_calls {
            e.patch(c, at);
        }
    } else {
        let mut routine_of: BTreeMap<String, usize> = BTreeMap::new();
        for (c, lname) in route_calls {
            let at = match routine_of.get(&lname) {
                Some(at) => *at,
                None => {
                    let at = e.here();
                    range_consts(&mut e, tree.range(&lname));
                    emit_route_loop(&mut e);
                    routine_of.insert(lname, at);
                    at
                }
            };
            e.patch(c, at);
        }
    }

    // shared helpers, then lambda bodies
    let mut pending_calls: Vec<(usize, Option<usize>, String)> = Vec::new();
    let mut shared_at = Vec::new();
    for f in input.shared {
        let t = translate(f, None, input)?;
        let base = e.here();
        shared_at.push((f.name.clone(), base));
        append(&mut e, t, base, None, &mut pending_calls);
    }
    let mut images = Vec::new();
    let mut lambda_images = Vec::new();
    for (li, l) in input.lambdas.iter().enumerate() {
        let mut functions = Vec::new();
        for f in &l.functions {
            let t = translate(f, Some(&l.name), input)?;
            let base = e.here();
            let len = t.ops.len();
            append(&mut e, t, base, Some(li), &mut pending_calls);
            functions.push((f.name.clone(), base, base + len));
        }
        let entry = functions
            .iter()
            .find(|(n, _, _)| *n == l.entry)
            .map(|(_, s, _)| *s)
            .ok_or_else(|| CompileError::Internal(format!("entry of {} missing", l.name)))?;
        for g in &l.globals {
            if g.init.is_empty() {
                continue;
            }
            let p = input.placement.get(&l.name, &g.name).ok_or_else(|| CompileError::Unplaced {
                lambda: l.name.clone(),
                object: g.name.clone(),
            })?;
            images.push(MemImage {
                tier: p.tier,
                base: p.base,
                bytes: g.init.clone(),
                owner: Owner::Lambda(li as u16),
            });
        }
        lambda_images.push(LambdaImage {
            name: l.name.clone(),
            entry,
            functions,
        });
    }
    for (at, li, name) in pending_calls {
        let local = li.and_then(|li| {
            lambda_images[li]
                .functions
                .iter()
                .find(|(n, _, _)| *n == name)
                .map(|(_, s, _)| *s)
        });
        let target = local
            .or_else(|| shared_at.iter().find(|(n, _)| *n == name).map(|(_, s)| *s))
            .ok_or_else(|| CompileError::Internal(format!("unresolved call to {name}")))?;
        e.patch(at, target);
    }
    for (at, lname) in enters {
        let li = lambda_index[lname.as_str()] as usize;
        e.patch(at, lambda_images[li].entry);
    }

    let table = tree.table_bytes();
    if table.len() as u64 > input.nic.system_area_bytes {
        return Err(CompileError::SystemArea {
            needed: table.len() as u64,
            available: input.nic.system_area_bytes,
        });
    }
    if !table.is_empty() {
        images.insert(
            0,
            MemImage {
                tier: Tier::Ctm,
                base: SYSTEM_AREA_BASE,
                bytes: table,
                owner: Owner::System,
            },
        );
    }
    let mut workload_ids: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for r in &prog.stage.rules {
        workload_ids.entry(r.lambda.clone()).or_default().push(r.workload_id);
    }
    Ok(Firmware {
        opt_level: input.opt_level,
        listing: e.code,
        dispatch,
        lambdas: lambda_images,
        shared: shared_at,
        parse_graph: input.parse_graph.clone(),
        decision_tree: tree.clone(),
        placement: input.placement.clone(),
        images,
        hdr_size: input.area.size,
        workload_ids,
    })
}

fn append(
    e: &mut Emitter,
    t: FnTranslation,
    base: usize,
    lambda: Option<usize>,
    pending: &mut Vec<(usize, Option<usize>, String)>,
) {
    for mut ins in t.ops {
        if matches!(ins.op, Op::Jmp { .. } | Op::Br { .. }) {
            let tgt = ins.op.branch_target().unwrap();
            ins.op.set_target(base + tgt);
        }
        e.code.push(ins);
    }
    for (at, name) in t.calls {
        pending.push((base + at, lambda, name));
    }
}
