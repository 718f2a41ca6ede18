//! Random valid Match+Lambda programs, emitted as text and parsed back.
#![allow(dead_code)]

use std::fmt::Write as _;

use lnic_core::ir::{parse_program, MLProgram};
use rand::seq::SliceRandom;
use rand::Rng;

pub const PAYLOAD_MIN: usize = 64;
pub const PAYLOAD_MAX: usize = 200;
pub const SOURCES: [u32; 4] = [1, 2, 3, 4];
pub const ECHO_ENDPOINT: u32 = 7;

struct Global {
    name: String,
    size: u32,
    readonly: bool,
}

const ALU: [&str; 9] = ["add", "sub", "mul", "div", "and", "or", "xor", "shl", "shr"];
const BR: [&str; 4] = ["jeq", "jne", "jlt", "jge"];

fn reg<R: Rng>(rng: &mut R) -> String {
    format!("r{}", rng.gen_range(1..=12))
}

fn imm<R: Rng>(rng: &mut R) -> i32 {
    match rng.gen_range(0..4) {
        0 => rng.gen_range(-4..=4),
        1 => rng.gen_range(0..256),
        2 => rng.gen_range(0..32),
        _ => rng.gen(),
    }
}

fn operand<R: Rng>(rng: &mut R) -> String {
    if rng.gen_bool(0.5) {
        reg(rng)
    } else {
        imm(rng).to_string()
    }
}

fn alu<R: Rng>(rng: &mut R) -> String {
    let op = *ALU.choose(rng).unwrap();
    let rb = if op == "div" && rng.gen_bool(0.8) {
        rng.gen_range(1..100).to_string()
    } else {
        operand(rng)
    };
    format!("    {op} {}, {}, {rb}\n", reg(rng), reg(rng))
}

/// Straight-line helper touching no globals; the same text is pasted into every lambda.
fn helper<R: Rng>(rng: &mut R, name: &str) -> String {
    let mut s = format!(".func {name}\n");
    for _ in 0..rng.gen_range(2..8) {
        s.push_str(&alu(rng));
    }
    let _ = writeln!(s, "    mov r0, {}\n    ret", reg(rng));
    s
}

struct Ctx<'a> {
    globals: &'a [Global],
    header: bool,
    helpers: usize,
}

/// One or more lines that never jump outside themselves.
fn item<R: Rng>(rng: &mut R, cx: &Ctx, loops: &mut usize, allow_loop: bool) -> String {
    let r = reg(rng);
    match rng.gen_range(0..17) {
        0 => format!("    const {r}, {}\n", imm(rng)),
        1 => format!("    mov {r}, {}\n", reg(rng)),
        2 | 3 => alu(rng),
        4 => {
            let f = *["src", "len"].choose(rng).unwrap();
            format!("    ldh {r}, match.{f}\n")
        }
        5 if cx.header => {
            let f = *["a", "b", "c"].choose(rng).unwrap();
            if rng.gen_bool(0.5) {
                format!("    ldh {r}, h0.{f}\n")
            } else {
                format!("    sth h0.{f}, {r}\n")
            }
        }
        6 => {
            let w = *["b", "h", ""].choose(rng).unwrap();
            let i = reg(rng);
            format!("    and {i}, {i}, 63\n    ldm{w} {r}, [payload + {i} + {}]\n", rng.gen_range(0..4))
        }
        7..=9 if !cx.globals.is_empty() => {
            let g = cx.globals.choose(rng).unwrap();
            let (w, wb) = *[("b", 1u32), ("h", 2), ("", 4)].choose(rng).unwrap();
            let store = !g.readonly && rng.gen_bool(0.5);
            let addr = if g.size <= 4 || rng.gen_bool(0.2) {
                format!("[{} + {}]", g.name, rng.gen_range(0..=g.size - wb))
            } else if rng.gen_bool(0.05) {
                // unmasked index: may fall outside the object and trap
                let i = reg(rng);
                format!("[{} + {i}]", g.name)
            } else {
                let i = reg(rng);
                let mask = g.size / 2 - 1;
                let pre = format!("    and {i}, {i}, {mask}\n");
                return if store {
                    format!("{pre}    stm{w} [{} + {i}], {r}\n", g.name)
                } else {
                    format!("{pre}    ldm{w} {r}, [{} + {i}]\n", g.name)
                };
            };
            if store {
                format!("    stm{w} {addr}, {r}\n")
            } else {
                format!("    ldm{w} {r}, {addr}\n")
            }
        }
        10 => {
            let w = *["b", "h", ""].choose(rng).unwrap();
            format!("    stm{w} [resp + {}], {r}\n", rng.gen_range(0..512))
        }
        11 if !cx.globals.is_empty() => {
            let g = cx.globals.choose(rng).unwrap();
            let len = rng.gen_range(0..=g.size.min(256));
            let off = rng.gen_range(0..=g.size - len);
            format!("    memcpy [resp + {}], [{} + {off}], {len}\n", rng.gen_range(0..512), g.name)
        }
        12 => {
            let l = reg(rng);
            format!(
                "    ldh {l}, match.len\n    and {l}, {l}, 127\n    memcpy [resp + {}], [payload + 0], {l}\n",
                rng.gen_range(0..256)
            )
        }
        13 => format!(
            "    emitpkt {r}, {ECHO_ENDPOINT}, [payload + {}], {}\n    ldmb {}, [reply + 0]\n",
            rng.gen_range(0..32),
            rng.gen_range(1..=32),
            reg(rng)
        ),
        14 if cx.helpers > 0 => format!("    call h{}\n    mov {r}, r0\n", rng.gen_range(0..cx.helpers)),
        15 if allow_loop => {
            let k = *loops;
            *loops += 1;
            let c = format!("r{}", 20 + k % 4);
            let mut s = format!("    const {c}, 0\nloop{k}:\n");
            for _ in 0..rng.gen_range(1..4) {
                s.push_str(&item(rng, cx, loops, false));
            }
            let _ = writeln!(s, "    add {c}, {c}, 1\n    jlt {c}, {}, loop{k}", rng.gen_range(1..=8));
            s
        }
        16 => {
            let sh = rng.gen_range(0..=16);
            let m = if rng.gen_bool(0.5) { "mulshr" } else { "divshl" };
            format!("    {m} {r}, {}, {}, {sh}\n", reg(rng), reg(rng))
        }
        _ => alu(rng),
    }
}

fn halt<R: Rng>(rng: &mut R) -> String {
    let rc = match rng.gen_range(0..10) {
        0..=4 => "FORWARD".to_string(),
        5 => "DROP".to_string(),
        6 => "TO_HOST".to_string(),
        7 => reg(rng),
        _ => rng.gen_range(0..4).to_string(),
    };
    format!("    halt {rc}\n")
}

fn lambda<R: Rng>(rng: &mut R, name: &str, header: bool, helpers: &[String]) -> String {
    let mut s = format!(".lambda {name}\n");
    let globals: Vec<Global> = (0..rng.gen_range(0..=3))
        .map(|i| Global {
            name: format!("g{i}"),
            size: 1 << rng.gen_range(2..=12),
            readonly: rng.gen_bool(0.25),
        })
        .collect();
    for g in &globals {
        let pragma = if g.readonly {
            "readonly"
        } else {
            *["hot", "cold", "none", ""].choose(rng).unwrap()
        };
        let _ = writeln!(s, ".global {} {} {pragma}", g.name, g.size);
        if rng.gen_bool(0.7) {
            let n = rng.gen_range(1..=g.size.min(64));
            let hex: String = (0..n).map(|_| format!("{:02x}", rng.gen::<u8>())).collect();
            let _ = writeln!(s, ".init {} hex {hex}", g.name);
        } else if rng.gen_bool(0.5) {
            let _ = writeln!(s, ".init {} fill {}", g.name, rng.gen::<u8>());
        }
    }
    for h in helpers {
        s.push_str(h);
    }
    let cx = Ctx {
        globals: &globals,
        header,
        helpers: helpers.len(),
    };
    let mut loops = 0;
    let items: Vec<String> = (0..rng.gen_range(3..20))
        .map(|_| item(rng, &cx, &mut loops, true))
        .collect();
    // forward branches: (source position, label position)
    let mut before: Vec<Vec<String>> = vec![Vec::new(); items.len() + 1];
    for k in 0..rng.gen_range(0..4) {
        let i = rng.gen_range(0..items.len());
        let j = rng.gen_range(i + 1..=items.len());
        let b = *BR.choose(rng).unwrap();
        before[i].push(format!("    {b} {}, {}, fwd{k}\n", reg(rng), operand(rng)));
        before[j].insert(0, format!("fwd{k}:\n"));
        if rng.gen_bool(0.2) {
            // early exit on the fall-through path
            before[j].insert(0, halt(rng));
        }
    }
    s.push_str(".func main\n.entry\n");
    for (i, it) in items.iter().enumerate() {
        for b in &before[i] {
            s.push_str(b);
        }
        s.push_str(it);
    }
    for b in &before[items.len()] {
        s.push_str(b);
    }
    s.push_str(&halt(rng));
    s.push_str(".end\n");
    s
}

/// Text of a random program with 1..=3 lambdas bound to workload ids 1..=n.
pub fn program_text<R: Rng>(rng: &mut R) -> String {
    let mut s = String::new();
    let header = rng.gen_bool(0.5);
    if header {
        s.push_str(".header h0 a:1 b:2 c:4\n");
    }
    let helpers: Vec<String> = (0..rng.gen_range(0..=3)).map(|i| helper(rng, &format!("h{i}"))).collect();
    let n = rng.gen_range(1..=3);
    for i in 0..n {
        // each lambda pastes a random subset prefix of the shared helpers
        let k = if helpers.is_empty() { 0 } else { rng.gen_range(0..=helpers.len()) };
        s.push_str(&lambda(rng, &format!("l{i}"), header, &helpers[..k]));
    }
    for i in 0..n {
        let _ = writeln!(s, ".rule {} l{i}", i + 1);
        for &src in SOURCES.iter() {
            if rng.gen_bool(0.3) {
                let _ = writeln!(s, ".route l{i} {src} {}", 100 + rng.gen_range(0..8));
            }
        }
    }
    s
}

pub fn program<R: Rng>(rng: &mut R) -> (String, MLProgram) {
    let text = program_text(rng);
    let p = parse_program(&text).unwrap_or_else(|e| panic!("generator produced bad text ({e}):\n{text}"));
    (text, p)
}

pub fn payload<R: Rng>(rng: &mut R) -> Vec<u8> {
    let n = rng.gen_range(PAYLOAD_MIN..=PAYLOAD_MAX);
    (0..n).map(|_| rng.gen()).collect()
}
