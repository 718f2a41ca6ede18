//! Textual Match+Lambda program format (`.mlp`).
//!
//! ```text
//! ; comment
//! .header kvHdr op:1 key_len:2 val_len:2 key:[16]
//! .lambda web
//! .global content 1024 readonly
//! .init content text "hello"
//! .func main
//! .entry
//!     memcpy [resp + 0], [content + 0], 1024
//!     halt FORWARD
//! .end
//! .rule 1 web
//! .route web 7 9
//! ```
//!
//! `.init` accepts `hex <digits>`, `text "<s>"`, `repeat "<s>"` (tiled to the
//! object size) and `fill <byte>`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::types::*;
use crate::model::{FieldSpec, HeaderSchema};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

fn err<T>(line: usize, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line,
        msg: msg.into(),
    })
}

struct FuncBuilder {
    name: String,
    line: usize,
    body: Vec<(usize, String)>,
}

struct LambdaBuilder {
    name: String,
    line: usize,
    entry: Option<String>,
    functions: Vec<Function>,
    globals: Vec<GlobalObject>,
    current: Option<FuncBuilder>,
}

impl LambdaBuilder {
    fn close_function(&mut self) -> Result<(), ParseError> {
        if let Some(fb) = self.current.take() {
            if self.functions.iter().any(|f| f.name == fb.name) {
                return err(fb.line, format!("function `{}` defined twice", fb.name));
            }
            self.functions.push(build_function(fb)?);
        }
        Ok(())
    }

    fn finish(mut self) -> Result<LambdaProgram, ParseError> {
        self.close_function()?;
        let Some(entry) = self.entry else {
            return err(self.line, format!("lambda `{}` has no .entry function", self.name));
        };
        Ok(LambdaProgram {
            name: self.name,
            entry,
            functions: self.functions,
            globals: self.globals,
        })
    }
}

pub fn parse_program(src: &str) -> Result<MLProgram, ParseError> {
    let mut headers: Vec<HeaderSchema> = Vec::new();
    let mut lambdas: Vec<LambdaProgram> = Vec::new();
    let mut stage = MatchStage::default();
    let mut cur: Option<LambdaBuilder> = None;

    for (idx, raw) in src.lines().enumerate() {
        let line = idx + 1;
        let text = strip_comment(raw).trim();
        if text.is_empty() {
            continue;
        }
        if let Some(directive) = text.strip_prefix('.') {
            let (kw, rest) = split_word(directive);
            let rest = rest.trim();
            match kw {
                "header" => {
                    if cur.is_some() {
                        return err(line, ".header inside a lambda");
                    }
                    headers.push(parse_header(line, rest)?);
                }
                "lambda" => {
                    if cur.is_some() {
                        return err(line, "nested .lambda (missing .end?)");
                    }
                    let name = ident(line, rest)?;
                    cur = Some(LambdaBuilder {
                        name,
                        line,
                        entry: None,
                        functions: Vec::new(),
                        globals: Vec::new(),
                        current: None,
                    });
                }
                "end" => {
                    let Some(lb) = cur.take() else {
                        return err(line, ".end outside a lambda");
                    };
                    lambdas.push(lb.finish()?);
                }
                "global" => {
                    let lb = in_lambda(&mut cur, line)?;
                    let parts: Vec<&str> = rest.split_whitespace().collect();
                    if parts.len() < 2 || parts.len() > 3 {
                        return err(line, "expected `.global NAME SIZE [PRAGMA]`");
                    }
                    let name = ident(line, parts[0])?;
                    let size = parse_int(parts[1])
                        .filter(|s| *s > 0)
                        .ok_or_else(|| ParseError {
                            line,
                            msg: format!("bad object size `{}`", parts[1]),
                        })?;
                    let pragma = match parts.get(2).copied().unwrap_or("none") {
                        "hot" => Pragma::Hot,
                        "cold" => Pragma::Cold,
                        "readonly" => Pragma::ReadOnly,
                        "none" => Pragma::None,
                        p => return err(line, format!("unknown pragma `{p}`")),
                    };
                    if lb.globals.iter().any(|g| g.name == name) {
                        return err(line, format!("global `{name}` declared twice"));
                    }
                    lb.globals.push(GlobalObject::new(name, size as u32, pragma));
                }
                "init" => {
                    let lb = in_lambda(&mut cur, line)?;
                    let (name, rest) = split_word(rest);
                    let Some(g) = lb.globals.iter_mut().find(|g| g.name == name) else {
                        return err(line, format!("`.init` of undeclared global `{name}`"));
                    };
                    g.init = parse_init(line, rest.trim(), g.size as usize)?;
                }
                "func" => {
                    let lb = in_lambda(&mut cur, line)?;
                    lb.close_function()?;
                    lb.current = Some(FuncBuilder {
                        name: ident(line, rest)?,
                        line,
                        body: Vec::new(),
                    });
                }
                "entry" => {
                    let lb = in_lambda(&mut cur, line)?;
                    let Some(fb) = &lb.current else {
                        return err(line, ".entry outside a function");
                    };
                    if lb.entry.is_some() {
                        return err(line, "second .entry in lambda");
                    }
                    lb.entry = Some(fb.name.clone());
                }
                "rule" => {
                    let parts: Vec<&str> = rest.split_whitespace().collect();
                    if parts.len() != 2 {
                        return err(line, "expected `.rule WORKLOAD_ID LAMBDA`");
                    }
                    let wid = parse_int(parts[0])
                        .and_then(|v| u32::try_from(v).ok())
                        .ok_or_else(|| ParseError {
                            line,
                            msg: format!("bad workload id `{}`", parts[0]),
                        })?;
                    stage.rules.push(MatchRule {
                        workload_id: wid,
                        lambda: ident(line, parts[1])?,
                    });
                }
                "route" => {
                    let parts: Vec<&str> = rest.split_whitespace().collect();
                    if parts.len() != 3 {
                        return err(line, "expected `.route LAMBDA KEY EGRESS`");
                    }
                    let num = |s: &str| {
                        parse_int(s)
                            .and_then(|v| u32::try_from(v).ok())
                            .ok_or_else(|| ParseError {
                                line,
                                msg: format!("bad endpoint `{s}`"),
                            })
                    };
                    stage
                        .routes
                        .entry(ident(line, parts[0])?)
                        .or_default()
                        .push(Route {
                            key: num(parts[1])?,
                            egress: num(parts[2])?,
                        });
                }
                other => return err(line, format!("unknown directive `.{other}`")),
            }
            continue;
        }
        let lb = in_lambda(&mut cur, line)?;
        let Some(fb) = lb.current.as_mut() else {
            return err(line, "instruction outside a function");
        };
        fb.body.push((line, text.to_string()));
    }
    if let Some(lb) = cur {
        return err(lb.line, format!("lambda `{}` missing .end", lb.name));
    }
    Ok(MLProgram {
        headers,
        lambdas,
        stage,
    })
}

fn in_lambda(cur: &mut Option<LambdaBuilder>, line: usize) -> Result<&mut LambdaBuilder, ParseError> {
    match cur.as_mut() {
        Some(lb) => Ok(lb),
        None => err(line, "directive only valid inside .lambda"),
    }
}

fn strip_comment(s: &str) -> &str {
    // quotes in .init text may contain ';'
    let mut in_quote = false;
    for (i, c) in s.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            ';' | '#' if !in_quote => return &s[..i],
            _ => {}
        }
    }
    s
}

fn split_word(s: &str) -> (&str, &str) {
    let s = s.trim_start();
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], &s[i..]),
        None => (s, ""),
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn ident(line: usize, s: &str) -> Result<String, ParseError> {
    let s = s.trim();
    if is_ident(s) {
        Ok(s.to_string())
    } else {
        err(line, format!("expected identifier, found `{s}`"))
    }
}

fn parse_int(s: &str) -> Option<i64> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(h, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn parse_header(line: usize, rest: &str) -> Result<HeaderSchema, ParseError> {
    let mut parts = rest.split_whitespace();
    let name = ident(line, parts.next().unwrap_or(""))?;
    if name == MATCH_SCHEMA {
        return err(line, "`match` is a reserved header name");
    }
    let mut fields = Vec::new();
    for p in parts {
        let Some((fname, w)) = p.split_once(':') else {
            return err(line, format!("expected FIELD:WIDTH, found `{p}`"));
        };
        let (array, w) = match w.strip_prefix('[').and_then(|w| w.strip_suffix(']')) {
            Some(inner) => (true, inner),
            None => (false, w),
        };
        let width = parse_int(w)
            .filter(|w| *w > 0)
            .ok_or_else(|| ParseError {
                line,
                msg: format!("bad width `{w}`"),
            })? as usize;
        fields.push(FieldSpec {
            name: ident(line, fname)?,
            width,
            array,
        });
    }
    HeaderSchema::new(name, fields).map_err(|e| ParseError {
        line,
        msg: e.to_string(),
    })
}

fn quoted(line: usize, s: &str) -> Result<String, ParseError> {
    let s = s.trim();
    let Some(inner) = s.strip_prefix('"').and_then(|s| s.strip_suffix('"')) else {
        return err(line, "expected a quoted string");
    };
    let mut out = String::new();
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some('\\') => out.push('\\'),
                Some('"') => out.push('"'),
                other => return err(line, format!("bad escape `\\{}`", other.unwrap_or(' '))),
            }
        } else {
            out.push(c);
        }
    }
    Ok(out)
}

fn parse_init(line: usize, rest: &str, size: usize) -> Result<Vec<u8>, ParseError> {
    let (kind, arg) = split_word(rest);
    let bytes = match kind {
        "hex" => {
            let digits: String = arg.split_whitespace().collect();
            if !digits.len().is_multiple_of(2) {
                return err(line, "odd number of hex digits");
            }
            (0..digits.len())
                .step_by(2)
                .map(|i| u8::from_str_radix(&digits[i..i + 2], 16))
                .collect::<Result<Vec<u8>, _>>()
                .map_err(|_| ParseError {
                    line,
                    msg: "bad hex digit".into(),
                })?
        }
        "text" => quoted(line, arg)?.into_bytes(),
        "repeat" => {
            let unit = quoted(line, arg)?.into_bytes();
            if unit.is_empty() {
                return err(line, "empty repeat unit");
            }
            unit.iter().copied().cycle().take(size).collect()
        }
        "fill" => {
            let b = parse_int(arg)
                .and_then(|v| u8::try_from(v).ok())
                .ok_or_else(|| ParseError {
                    line,
                    msg: format!("bad fill byte `{}`", arg.trim()),
                })?;
            vec![b; size]
        }
        other => return err(line, format!("unknown .init form `{other}`")),
    };
    if bytes.len() > size {
        return err(line, format!("init of {} bytes exceeds object size {size}", bytes.len()));
    }
    Ok(bytes)
}

fn build_function(fb: FuncBuilder) -> Result<Function, ParseError> {
    let mut labels = BTreeMap::new();
    let mut instr_lines = Vec::new();
    for (line, text) in fb.body {
        let mut t = text.as_str();
        // `name:` possibly followed by an instruction on the same line
        while let Some(colon) = t.find(':') {
            let cand = t[..colon].trim();
            if !is_ident(cand) || t[..colon].contains('[') {
                break;
            }
            if labels.insert(cand.to_string(), instr_lines.len()).is_some() {
                return err(line, format!("label `{cand}` defined twice"));
            }
            t = t[colon + 1..].trim_start();
        }
        if !t.is_empty() {
            instr_lines.push((line, t.to_string()));
        }
    }
    let instrs = instr_lines
        .iter()
        .map(|(line, t)| parse_instr(*line, t, &labels))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Function {
        name: fb.name,
        instrs,
    })
}

fn split_operands(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '[' => {
                depth += 1;
                cur.push(c)
            }
            ']' => {
                depth -= 1;
                cur.push(c)
            }
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn reg(line: usize, s: &str) -> Result<Reg, ParseError> {
    let s = s.trim();
    match s.strip_prefix('r').and_then(|n| n.parse::<u8>().ok()) {
        Some(n) if (n as usize) < NUM_REGS => Ok(Reg(n)),
        _ => err(line, format!("expected register r0..r31, found `{s}`")),
    }
}

fn imm(line: usize, s: &str) -> Result<i32, ParseError> {
    let s = s.trim();
    match s {
        "FORWARD" => return Ok(rc::FORWARD),
        "DROP" => return Ok(rc::DROP),
        "TO_HOST" => return Ok(rc::TO_HOST),
        _ => {}
    }
    match parse_int(s) {
        Some(v) if v >= i32::MIN as i64 && v <= u32::MAX as i64 => Ok(v as u32 as i32),
        _ => err(line, format!("expected immediate, found `{s}`")),
    }
}

fn operand(line: usize, s: &str) -> Result<Operand, ParseError> {
    let t = s.trim();
    if t.starts_with('r') && t[1..].chars().all(|c| c.is_ascii_digit()) && t.len() > 1 {
        Ok(Operand::Reg(reg(line, t)?))
    } else {
        Ok(Operand::Imm(imm(line, t)?))
    }
}

fn label(line: usize, s: &str, labels: &BTreeMap<String, usize>) -> Result<usize, ParseError> {
    match labels.get(s.trim()) {
        Some(i) => Ok(*i),
        None => err(line, format!("undefined label `{}`", s.trim())),
    }
}

fn field(line: usize, s: &str) -> Result<FieldRef, ParseError> {
    match s.trim().split_once('.') {
        Some((schema, f)) => Ok(FieldRef {
            schema: ident(line, schema)?,
            field: ident(line, f)?,
        }),
        None => err(line, format!("expected HEADER.FIELD, found `{s}`")),
    }
}

fn memref(line: usize, s: &str) -> Result<MemRef, ParseError> {
    let s = s.trim();
    let Some(inner) = s.strip_prefix('[').and_then(|s| s.strip_suffix(']')) else {
        return err(line, format!("expected [REGION + OFFSET], found `{s}`"));
    };
    // tokenize into signed terms
    let mut terms: Vec<(bool, String)> = Vec::new();
    let mut sign = true;
    let mut cur = String::new();
    for c in inner.chars() {
        match c {
            '+' | '-' => {
                if !cur.trim().is_empty() {
                    terms.push((sign, cur.trim().to_string()));
                    cur.clear();
                }
                sign = c == '+';
            }
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        terms.push((sign, cur.trim().to_string()));
    }
    let Some(((true, base), rest)) = terms.split_first().map(|(a, b)| (a.clone(), b)) else {
        return err(line, "memory operand needs a region");
    };
    let region = match base.as_str() {
        "payload" => Region::Payload,
        "resp" => Region::Resp,
        "reply" => Region::Reply,
        b => match b.strip_prefix("hdr.") {
            Some(h) => Region::Header(ident(line, h)?),
            None => Region::Global(ident(line, b)?),
        },
    };
    let mut index = None;
    let mut disp: i64 = 0;
    for (positive, t) in rest {
        if t.starts_with('r') && t.len() > 1 && t[1..].chars().all(|c| c.is_ascii_digit()) {
            if !positive || index.is_some() {
                return err(line, "at most one added index register");
            }
            index = Some(reg(line, t)?);
        } else {
            let v = parse_int(t).ok_or_else(|| ParseError {
                line,
                msg: format!("bad offset `{t}`"),
            })?;
            disp += if *positive { v } else { -v };
        }
    }
    let disp = i32::try_from(disp).map_err(|_| ParseError {
        line,
        msg: "offset out of range".into(),
    })?;
    Ok(MemRef {
        region,
        index,
        disp,
    })
}

fn expect_n(line: usize, ops: &[String], n: usize, mnemonic: &str) -> Result<(), ParseError> {
    if ops.len() != n {
        return err(line, format!("`{mnemonic}` takes {n} operands, found {}", ops.len()));
    }
    Ok(())
}

fn parse_instr(
    line: usize,
    text: &str,
    labels: &BTreeMap<String, usize>,
) -> Result<Instr, ParseError> {
    let (mn, rest) = split_word(text);
    let mn = mn.to_ascii_lowercase();
    let ops = split_operands(rest);
    let n = |k: usize| expect_n(line, &ops, k, &mn);
    let alu = AluOp::ALL.iter().find(|a| a.mnemonic() == mn).copied();
    if let Some(op) = alu {
        n(3)?;
        return Ok(Instr::Alu {
            op,
            rd: reg(line, &ops[0])?,
            ra: reg(line, &ops[1])?,
            rb: operand(line, &ops[2])?,
        });
    }
    let width_of = |base: &str| match &mn[base.len()..] {
        "" => Some(Width::B4),
        "h" => Some(Width::B2),
        "b" => Some(Width::B1),
        _ => None,
    };
    Ok(match mn.as_str() {
        "const" => {
            n(2)?;
            Instr::Const {
                rd: reg(line, &ops[0])?,
                imm: imm(line, &ops[1])?,
            }
        }
        "mov" => {
            n(2)?;
            Instr::Mov {
                rd: reg(line, &ops[0])?,
                rs: reg(line, &ops[1])?,
            }
        }
        "mulshr" | "divshl" => {
            n(4)?;
            let shift = imm(line, &ops[3])?;
            if !(0..32).contains(&shift) {
                return err(line, "shift must be 0..31");
            }
            let (rd, ra, rb) = (reg(line, &ops[0])?, reg(line, &ops[1])?, reg(line, &ops[2])?);
            let shift = shift as u8;
            if mn == "mulshr" {
                Instr::MulShr { rd, ra, rb, shift }
            } else {
                Instr::DivShl { rd, ra, rb, shift }
            }
        }
        "jmp" => {
            n(1)?;
            Instr::Jmp {
                target: label(line, &ops[0], labels)?,
            }
        }
        "jeq" | "jne" | "jlt" | "jge" => {
            n(3)?;
            let cond = match mn.as_str() {
                "jeq" => Cond::Eq,
                "jne" => Cond::Ne,
                "jlt" => Cond::Lt,
                _ => Cond::Ge,
            };
            Instr::Br {
                cond,
                ra: reg(line, &ops[0])?,
                rb: operand(line, &ops[1])?,
                target: label(line, &ops[2], labels)?,
            }
        }
        "ldh" => {
            n(2)?;
            Instr::Ldh {
                rd: reg(line, &ops[0])?,
                field: field(line, &ops[1])?,
            }
        }
        "sth" => {
            n(2)?;
            Instr::Sth {
                field: field(line, &ops[0])?,
                rs: reg(line, &ops[1])?,
            }
        }
        m if m.starts_with("ldm") && width_of("ldm").is_some() => {
            n(2)?;
            Instr::Ldm {
                rd: reg(line, &ops[0])?,
                width: width_of("ldm").unwrap(),
                addr: memref(line, &ops[1])?,
            }
        }
        m if m.starts_with("stm") && width_of("stm").is_some() => {
            n(2)?;
            Instr::Stm {
                addr: memref(line, &ops[0])?,
                width: width_of("stm").unwrap(),
                rs: reg(line, &ops[1])?,
            }
        }
        "memcpy" => {
            n(3)?;
            Instr::Memcpy {
                dst: memref(line, &ops[0])?,
                src: memref(line, &ops[1])?,
                len: operand(line, &ops[2])?,
            }
        }
        "emitpkt" => {
            n(4)?;
            Instr::EmitPkt {
                rd: reg(line, &ops[0])?,
                endpoint: imm(line, &ops[1])? as u32,
                src: memref(line, &ops[2])?,
                len: operand(line, &ops[3])?,
            }
        }
        "call" => {
            n(1)?;
            Instr::Call {
                func: ident(line, &ops[0])?,
            }
        }
        "ret" => {
            n(0)?;
            Instr::Ret
        }
        "halt" => {
            n(1)?;
            Instr::Halt {
                rc: operand(line, &ops[0])?,
            }
        }
        "fconst" => {
            n(2)?;
            let value: f64 = ops[1].trim().parse().map_err(|_| ParseError {
                line,
                msg: format!("bad float `{}`", ops[1]),
            })?;
            Instr::FConst {
                rd: reg(line, &ops[0])?,
                value,
            }
        }
        "fadd" | "fsub" | "fmul" | "fdiv" => {
            n(3)?;
            let op = match mn.as_str() {
                "fadd" => FloatOp::Add,
                "fsub" => FloatOp::Sub,
                "fmul" => FloatOp::Mul,
                _ => FloatOp::Div,
            };
            Instr::Float {
                op,
                rd: reg(line, &ops[0])?,
                ra: reg(line, &ops[1])?,
                rb: reg(line, &ops[2])?,
            }
        }
        "guard" => {
            n(4)?;
            let span = match split_word(&ops[2]) {
                ("len", l) => Span::Len(operand(line, l)?),
                ("width", w) => Span::Fixed(imm(line, w)? as u32),
                _ => return err(line, "guard span is `width N` or `len OPERAND`"),
            };
            let bound = match ops[3].trim() {
                "payload" => GuardBound::PayloadLen,
                "reply" => GuardBound::ReplyLen,
                b => GuardBound::Static(imm(line, b)? as u32),
            };
            Instr::Guard {
                index: match ops[0].trim() {
                    "_" => None,
                    r => Some(reg(line, r)?),
                },
                disp: imm(line, &ops[1])?,
                span,
                bound,
            }
        }
        other => return err(line, format!("unknown instruction `{other}`")),
    })
}

fn fmt_operand(o: &Operand) -> String {
    match o {
        Operand::Reg(r) => r.to_string(),
        Operand::Imm(v) => v.to_string(),
    }
}

/// One instruction in source syntax; branch targets are rendered by `label`.
pub fn format_instr(i: &Instr, label: &dyn Fn(usize) -> String) -> String {
    match i {
        Instr::Const { rd, imm } => format!("const {rd}, {imm}"),
        Instr::Mov { rd, rs } => format!("mov {rd}, {rs}"),
        Instr::Alu { op, rd, ra, rb } => {
            format!("{} {rd}, {ra}, {}", op.mnemonic(), fmt_operand(rb))
        }
        Instr::MulShr { rd, ra, rb, shift } => format!("mulshr {rd}, {ra}, {rb}, {shift}"),
        Instr::DivShl { rd, ra, rb, shift } => format!("divshl {rd}, {ra}, {rb}, {shift}"),
        Instr::Jmp { target } => format!("jmp {}", label(*target)),
        Instr::Br {
            cond,
            ra,
            rb,
            target,
        } => format!(
            "{} {ra}, {}, {}",
            cond.mnemonic(),
            fmt_operand(rb),
            label(*target)
        ),
        Instr::Ldh { rd, field } => format!("ldh {rd}, {field}"),
        Instr::Sth { field, rs } => format!("sth {field}, {rs}"),
        Instr::Ldm { rd, width, addr } => format!("ldm{} {rd}, {addr}", width.suffix()),
        Instr::Stm { addr, width, rs } => format!("stm{} {addr}, {rs}", width.suffix()),
        Instr::Memcpy { dst, src, len } => format!("memcpy {dst}, {src}, {}", fmt_operand(len)),
        Instr::EmitPkt {
            rd,
            endpoint,
            src,
            len,
        } => format!("emitpkt {rd}, {endpoint}, {src}, {}", fmt_operand(len)),
        Instr::Call { func } => format!("call {func}"),
        Instr::Ret => "ret".to_string(),
        Instr::Halt { rc } => match rc {
            Operand::Imm(rc::FORWARD) => "halt FORWARD".into(),
            Operand::Imm(rc::DROP) => "halt DROP".into(),
            Operand::Imm(rc::TO_HOST) => "halt TO_HOST".into(),
            _ => format!("halt {}", fmt_operand(rc)),
        },
        Instr::FConst { rd, value } => format!("fconst {rd}, {value:?}"),
        Instr::Float { op, rd, ra, rb } => format!("{} {rd}, {ra}, {rb}", op.mnemonic()),
        Instr::Guard {
            index,
            disp,
            span,
            bound,
        } => {
            let span = match span {
                Span::Fixed(w) => format!("width {w}"),
                Span::Len(l) => format!("len {}", fmt_operand(l)),
            };
            let bound = match bound {
                GuardBound::Static(b) => b.to_string(),
                GuardBound::PayloadLen => "payload".into(),
                GuardBound::ReplyLen => "reply".into(),
            };
            let index = index.map_or("_".to_string(), |r| r.to_string());
            format!("guard {index}, {disp}, {span}, {bound}")
        }
    }
}

pub fn print_function(f: &Function, entry: bool) -> String {
    let targets: std::collections::BTreeSet<usize> =
        f.instrs.iter().filter_map(Instr::branch_target).collect();
    let label = |t: usize| format!("L{t}");
    let mut out = format!(".func {}\n", f.name);
    if entry {
        out.push_str(".entry\n");
    }
    for (i, ins) in f.instrs.iter().enumerate() {
        if targets.contains(&i) {
            let _ = writeln!(out, "L{i}:");
        }
        let _ = writeln!(out, "    {}", format_instr(ins, &label));
    }
    if targets.contains(&f.instrs.len()) {
        let _ = writeln!(out, "L{}:", f.instrs.len());
    }
    out
}

pub fn print_lambda(l: &LambdaProgram) -> String {
    let mut out = format!(".lambda {}\n", l.name);
    for g in &l.globals {
        let _ = writeln!(out, ".global {} {} {}", g.name, g.size, g.pragma.keyword());
        if !g.init.is_empty() {
            let hex: String = g.init.iter().map(|b| format!("{b:02x}")).collect();
            let _ = writeln!(out, ".init {} hex {hex}", g.name);
        }
    }
    for f in &l.functions {
        out.push_str(&print_function(f, f.name == l.entry));
    }
    out.push_str(".end\n");
    out
}

pub fn print_program(p: &MLProgram) -> String {
    let mut out = String::new();
    for h in &p.headers {
        let _ = write!(out, ".header {}", h.name());
        for f in h.fields() {
            if f.array {
                let _ = write!(out, " {}:[{}]", f.name, f.width);
            } else {
                let _ = write!(out, " {}:{}", f.name, f.width);
            }
        }
        out.push('\n');
    }
    for l in &p.lambdas {
        out.push_str(&print_lambda(l));
    }
    for r in &p.stage.rules {
        let _ = writeln!(out, ".rule {} {}", r.workload_id, r.lambda);
    }
    for (lambda, routes) in &p.stage.routes {
        for r in routes {
            let _ = writeln!(out, ".route {lambda} {} {}", r.key, r.egress);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
; web server
.header serverHdr address:4 path:[8]
.lambda web
.global content 16 readonly
.init content text "hello; world"
.func main
.entry
    ldh r1, serverHdr.address
    const r2, 0
loop: jge r2, 4, done
    ldmb r3, [content + r2 + 1]
    add r2, r2, 1
    jmp loop
done:
    memcpy [resp + 0], [content + 0], 16
    halt FORWARD
.end
.rule 1 web
.route web 5 6
"#;

    #[test]
    fn parses_sample() {
        let p = parse_program(SAMPLE).unwrap();
        assert_eq!(p.headers[0].total_width(), 12);
        let l = &p.lambdas[0];
        assert_eq!(l.entry, "main");
        assert_eq!(&l.globals[0].init, b"hello; world");
        let f = &l.functions[0];
        assert_eq!(f.instrs.len(), 8);
        assert_eq!(f.instrs[2], Instr::Br {
            cond: Cond::Ge,
            ra: Reg(2),
            rb: Operand::Imm(4),
            target: 6
        });
        assert_eq!(
            f.instrs[3],
            Instr::Ldm {
                rd: Reg(3),
                width: Width::B1,
                addr: MemRef::indexed(Region::Global("content".into()), Reg(2), 1)
            }
        );
        assert_eq!(f.instrs[7], Instr::Halt { rc: Operand::Imm(rc::FORWARD) });
        assert_eq!(p.stage.rules[0].workload_id, 1);
        assert_eq!(p.stage.routes["web"], vec![Route { key: 5, egress: 6 }]);
    }

    #[test]
    fn print_parse_round_trip() {
        let p = parse_program(SAMPLE).unwrap();
        let again = parse_program(&print_program(&p)).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_program(".lambda a\n.func f\n.entry\n  bogus r1\n.end\n").unwrap_err();
        assert_eq!(e.line, 4);
        let e = parse_program(".lambda a\n.func f\n.entry\n  jmp nowhere\n.end\n").unwrap_err();
        assert!(e.msg.contains("undefined label"));
        let e = parse_program(".lambda a\n.func f\n  ret\n.end\n").unwrap_err();
        assert!(e.msg.contains("no .entry"));
        assert!(parse_program(".header match a:1\n").is_err());
    }

    #[test]
    fn negative_offsets_and_hex() {
        let p = parse_program(
            ".lambda a\n.global g 8\n.func f\n.entry\n  stmh [g + r4 - 2], r1\n  const r1, 0xff\n  halt 0\n.end\n",
        )
        .unwrap();
        let f = &p.lambdas[0].functions[0];
        assert_eq!(
            f.instrs[0],
            Instr::Stm {
                addr: MemRef::indexed(Region::Global("g".into()), Reg(4), -2),
                width: Width::B2,
                rs: Reg(1)
            }
        );
        assert_eq!(f.instrs[1], Instr::Const { rd: Reg(1), imm: 255 });
    }
}
