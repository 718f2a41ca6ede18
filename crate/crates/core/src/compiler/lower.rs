use crate::ir::{to_fixed, AluOp, FloatOp, Instr, LambdaProgram, Operand, FIXED_FRAC_BITS};

use super::CompileError;

/// Rewrites float forms into Q16.16 integer code, one instruction each.
pub fn lower_fixed_point(prog: &LambdaProgram) -> Result<LambdaProgram, CompileError> {
    let mut out = prog.clone();
    for f in &mut out.functions {
        for (idx, ins) in f.instrs.iter_mut().enumerate() {
            let new = match ins {
                Instr::FConst { rd, value } => Instr::Const {
                    rd: *rd,
                    imm: to_fixed(*value).ok_or_else(|| CompileError::FixedPointRange {
                        lambda: prog.name.clone(),
                        function: f.name.clone(),
                        instr: idx,
                        value: *value,
                    })?,
                },
                Instr::Float { op, rd, ra, rb } => match op {
                    FloatOp::Add | FloatOp::Sub => Instr::Alu {
                        op: if *op == FloatOp::Add { AluOp::Add } else { AluOp::Sub },
                        rd: *rd,
                        ra: *ra,
                        rb: Operand::Reg(*rb),
                    },
                    FloatOp::Mul => Instr::MulShr {
                        rd: *rd,
                        ra: *ra,
                        rb: *rb,
                        shift: FIXED_FRAC_BITS,
                    },
                    FloatOp::Div => Instr::DivShl {
                        rd: *rd,
                        ra: *ra,
                        rb: *rb,
                        shift: FIXED_FRAC_BITS,
                    },
                },
                _ => continue,
            };
            *ins = new;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_program, FlatStore, Interpreter, NoServices, Reg};
    use crate::model::MatchData;

    fn lambda(body: &str) -> (crate::ir::MLProgram, LambdaProgram) {
        let p = parse_program(&format!(".lambda a\n.func f\n.entry\n{body}\n.end\n")).unwrap();
        let l = p.lambdas[0].clone();
        (p, l)
    }

    #[test]
    fn fconst_half() {
        let (_, l) = lambda(" fconst r1, 0.5\n ret");
        let low = lower_fixed_point(&l).unwrap();
        assert_eq!(low.functions[0].instrs[0], Instr::Const { rd: Reg(1), imm: 32768 });
        assert!(!low.uses_float());
    }

    #[test]
    fn fmul_matches_hand_oracle() {
        let (p, l) = lambda(" fconst r1, 1.5\n fconst r2, 2.0\n fmul r0, r1, r2\n ret");
        let low = lower_fixed_point(&l).unwrap();
        let mut store = FlatStore::for_lambda(&low);
        let e = Interpreter::new(&p, &low).run(b"", &MatchData::default(), &mut store, &mut NoServices);
        // (98304 * 131072) >> 16
        assert_eq!(e.result, Ok(((98304i64 * 131072) >> 16) as i32));
        assert_eq!(e.result, Ok(196608));
    }

    #[test]
    fn out_of_range_constant() {
        let (_, l) = lambda(" fconst r1, 40000.0\n ret");
        assert!(matches!(
            lower_fixed_point(&l),
            Err(CompileError::FixedPointRange { value, .. }) if value == 40000.0
        ));
        let (_, l) = lambda(" fconst r1, -32768.0\n ret");
        assert!(lower_fixed_point(&l).is_ok());
        let (_, l) = lambda(" fconst r1, 32768.0\n ret");
        assert!(lower_fixed_point(&l).is_err());
    }
}
