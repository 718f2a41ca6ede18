use crate::ir::{
    match_schema, GuardBound, Instr, LambdaProgram, MemRef, Operand, Region, Span, MATCH_SCHEMA,
    RESP_CAPACITY,
};
use crate::model::HeaderSchema;

use super::stratify::PlacementMap;
use super::CompileError;

/// Static size of a region, or the dynamic bound a guard must check.
fn bound_of(
    lambda: &str,
    region: &Region,
    placement: &PlacementMap,
    headers: &[HeaderSchema],
) -> Result<GuardBound, CompileError> {
    Ok(match region {
        Region::Global(g) => GuardBound::Static(
            placement
                .get(lambda, g)
                .ok_or_else(|| CompileError::Unplaced {
                    lambda: lambda.to_string(),
                    object: g.clone(),
                })?
                .size,
        ),
        Region::Header(h) => {
            let width = if h == MATCH_SCHEMA {
                match_schema().total_width()
            } else {
                headers
                    .iter()
                    .find(|s| s.name() == h)
                    .map(|s| s.total_width())
                    .ok_or_else(|| CompileError::Internal(format!("unknown header {h}")))?
            };
            GuardBound::Static(width as u32)
        }
        Region::Resp => GuardBound::Static(RESP_CAPACITY),
        Region::Payload => GuardBound::PayloadLen,
        Region::Reply => GuardBound::ReplyLen,
    })
}

fn accesses(ins: &Instr) -> Vec<(&MemRef, Span)> {
    let span = |len: &Operand| match len {
        Operand::Imm(n) if *n >= 0 => Span::Fixed(*n as u32),
        other => Span::Len(*other),
    };
    match ins {
        Instr::Ldm { addr, width, .. } | Instr::Stm { addr, width, .. } => {
            vec![(addr, Span::Fixed(width.bytes()))]
        }
        Instr::Memcpy { dst, src, len } => vec![(dst, span(len)), (src, span(len))],
        Instr::EmitPkt { src, len, .. } => vec![(src, span(len))],
        _ => vec![],
    }
}

/// Adds a bounds check before every access not provably in bounds.
/// Provable violations are compile errors.
pub fn insert_isolation_guards(
    prog: &LambdaProgram,
    placement: &PlacementMap,
    headers: &[HeaderSchema],
) -> Result<LambdaProgram, CompileError> {
    let mut out = prog.clone();
    for f in &mut out.functions {
        let mut new = Vec::with_capacity(f.instrs.len());
        let mut remap = Vec::with_capacity(f.instrs.len());
        for (idx, ins) in f.instrs.iter().enumerate() {
            remap.push(new.len());
            for (m, span) in accesses(ins) {
                let bound = bound_of(&prog.name, &m.region, placement, headers)?;
                match (m.index, span, bound) {
                    (None, Span::Fixed(n), GuardBound::Static(size)) => {
                        let end = m.disp as i64 + n as i64;
                        if m.disp < 0 || end > size as i64 {
                            return Err(CompileError::StaticViolation {
                                lambda: prog.name.clone(),
                                function: f.name.clone(),
                                instr: idx,
                                region: m.region.to_string(),
                            });
                        }
                    }
                    (index, span, bound) => new.push(Instr::Guard {
                        index,
                        disp: m.disp,
                        span,
                        bound,
                    }),
                }
            }
            new.push(ins.clone());
        }
        remap.push(new.len());
        for ins in &mut new {
            if let Some(t) = ins.branch_target() {
                ins.set_branch_target(remap[t]);
            }
        }
        f.instrs = new;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::stratify::{stratify_program, StratifyMode};
    use crate::emulator::NicModel;
    use crate::ir::{parse_program, Reg};

    fn guard(src: &str) -> Result<LambdaProgram, CompileError> {
        let p = parse_program(src).unwrap();
        let pm = stratify_program(&p.lambdas, &NicModel::default(), StratifyMode::Stratified, &Default::default()).unwrap();
        insert_isolation_guards(&p.lambdas[0], &pm, &p.headers)
    }

    #[test]
    fn constant_in_bounds_unchanged() {
        let g = guard(".lambda a\n.global o 16\n.func f\n.entry\n ldm r1, [o + 12]\n halt 0\n.end\n").unwrap();
        assert_eq!(g.functions[0].instrs.len(), 2);
    }

    #[test]
    fn indexed_access_guarded() {
        let g = guard(".lambda a\n.global o 16\n.func f\n.entry\n ldm r1, [o + r3]\n halt 0\n.end\n").unwrap();
        assert_eq!(
            g.functions[0].instrs[0],
            Instr::Guard {
                index: Some(Reg(3)),
                disp: 0,
                span: Span::Fixed(4),
                bound: GuardBound::Static(16)
            }
        );
    }

    #[test]
    fn static_violation_is_error() {
        let e = guard(".lambda a\n.global o 16\n.func f\n.entry\n stm [o + 20], r1\n halt 0\n.end\n");
        assert!(matches!(e, Err(CompileError::StaticViolation { .. })));
    }

    #[test]
    fn branch_targets_follow_guards() {
        let g = guard(".lambda a\n.global o 16\n.func f\n.entry\n jmp x\nx: ldm r1, [payload + 0]\n halt 0\n.end\n").unwrap();
        let f = &g.functions[0];
        assert_eq!(f.instrs[0], Instr::Jmp { target: 1 });
        assert!(matches!(f.instrs[1], Instr::Guard { bound: GuardBound::PayloadLen, .. }));
    }
}
