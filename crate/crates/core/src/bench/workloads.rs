//! The benchmark lambdas and their request generators.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kv::{KvMessage, KV_ENDPOINT};
use crate::emulator::NicModel;
use crate::ir::{parse_program, MLProgram, RESP_CAPACITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WorkloadKind {
    Webserver,
    Kvclient,
    Imagexform,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 3] = [WorkloadKind::Webserver, WorkloadKind::Kvclient, WorkloadKind::Imagexform];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::Webserver => "webserver",
            WorkloadKind::Kvclient => "kvclient",
            WorkloadKind::Imagexform => "imagexform",
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WorkloadKind {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WorkloadKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| WorkloadError::Unknown(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadParams {
    pub content_size: u32,
    pub key_size: u16,
    pub value_size: u16,
    /// Distinct keys the KV generator draws from.
    pub key_space: u32,
    /// Fraction of KV requests that are GETs.
    pub get_ratio: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams {
            content_size: 1024,
            key_size: 16,
            value_size: 64,
            key_space: 64,
            get_ratio: 0.5,
            width: 64,
            height: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("unknown workload `{0}`")]
    Unknown(String),
    #[error("parameter {name} = {value} out of range")]
    Param { name: &'static str, value: u64 },
    #[error("image of {bytes} bytes does not fit the {area}-byte RDMA area")]
    ImageTooLarge { bytes: u64, area: u64 },
    #[error("generated program failed to parse: {0}")]
    Internal(String),
}

fn check(name: &'static str, value: u64, lo: u64, hi: u64) -> Result<(), WorkloadError> {
    if (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(WorkloadError::Param { name, value })
    }
}

impl WorkloadParams {
    pub fn validate(&self, model: &NicModel) -> Result<(), WorkloadError> {
        check("key_size", self.key_size as u64, 1, 250)?;
        check("value_size", self.value_size as u64, 0, 1024)?;
        check("key_space", self.key_space as u64, 1, 1 << 20)?;
        check("width", self.width as u64, 1, 65536)?;
        check("height", self.height as u64, 1, 65536)?;
        if !(0.0..=1.0).contains(&self.get_ratio) {
            return Err(WorkloadError::Param {
                name: "get_ratio",
                value: (self.get_ratio * 100.0) as u64,
            });
        }
        check("width*height", self.width as u64 * self.height as u64, 1, RESP_CAPACITY as u64)?;
        check("content_size", self.content_size as u64, 1, RESP_CAPACITY as u64)?;
        let bytes = self.image_bytes();
        if bytes > model.rdma_area_bytes {
            return Err(WorkloadError::ImageTooLarge {
                bytes,
                area: model.rdma_area_bytes,
            });
        }
        Ok(())
    }

    pub fn image_bytes(&self) -> u64 {
        self.width as u64 * self.height as u64 * 4
    }
}

pub const KV_HEADER: &str = ".header kvHdr op:1 key_len:2 val_len:2\n";

/// Clamps a response length; shared by the web server and the image transformer.
const BOUND_LEN: &str = "\
.func bound_len
    mov r0, r1
    jlt r1, r2, ok
    mov r0, r2
ok:
    ret
";

/// Forwards the request to the KV store and returns its reply; both KV
/// clients carry this function.
fn kv_query() -> String {
    format!(
        "\
.func kv_query
    ldh r8, match.len
    emitpkt r9, {KV_ENDPOINT}, [payload + 0], r8
    memcpy [resp + 0], [reply + 0], r9
    mov r0, r9
    ret
"
    )
}

const MAX_RESP: u32 = RESP_CAPACITY;

pub fn web_lambda(name: &str, p: &WorkloadParams) -> String {
    let n = p.content_size;
    format!(
        "\
.lambda {name}
.global content {n} readonly
.init content repeat \"<p>hello from {name}</p>\"
{BOUND_LEN}.func main
.entry
    const r1, {n}
    const r2, {MAX_RESP}
    call bound_len
    memcpy [resp + 0], [content + 0], r0
    halt FORWARD
.end
"
    )
}

/// `variant` 0 counts requests, 1 remembers the last key length.
pub fn kv_lambda(name: &str, variant: u8) -> String {
    let custom = if variant == 0 {
        "\
    ldm r2, [stat + 0]
    add r2, r2, 1
    stm [stat + 0], r2
"
    } else {
        "\
    ldh r2, kvHdr.key_len
    stm [stat + 0], r2
"
    };
    format!(
        "\
.lambda {name}
.global stat 4 hot
{q}.func main
.entry
    ldh r1, kvHdr.op
    jge r1, 2, bad
{custom}    call kv_query
    halt FORWARD
bad:
    halt DROP
.end
",
        q = kv_query()
    )
}

pub fn image_lambda(name: &str) -> String {
    format!(
        "\
.lambda {name}
{BOUND_LEN}.func main
.entry
    ldh r10, match.len
    shr r10, r10, 2
    const r11, 0
    const r12, 0
loop:
    jge r12, r10, done
    ldmb r1, [payload + r11 + 0]
    ldmb r2, [payload + r11 + 1]
    ldmb r3, [payload + r11 + 2]
    mul r1, r1, 77
    mul r2, r2, 150
    mul r3, r3, 29
    add r1, r1, r2
    add r1, r1, r3
    shr r1, r1, 8
    stmb [resp + r12], r1
    add r11, r11, 4
    add r12, r12, 1
    jmp loop
done:
    mov r1, r12
    const r2, {MAX_RESP}
    call bound_len
    halt FORWARD
.end
"
    )
}

fn routes(names: &[&str]) -> String {
    let mut s = String::new();
    for (i, n) in names.iter().enumerate() {
        s.push_str(&format!(".route {n} 0 0\n.route {n} {} {}\n", 1000 + i, 2000 + i));
    }
    s
}

fn parse(text: &str) -> Result<MLProgram, WorkloadError> {
    parse_program(text).map_err(|e| WorkloadError::Internal(e.to_string()))
}

/// Lambda names used for `kind` with `copies` instances (round-robin runs use 3).
pub fn lambda_names(kind: WorkloadKind, copies: usize) -> Vec<String> {
    let base = match kind {
        WorkloadKind::Webserver => "web",
        WorkloadKind::Kvclient => "kv",
        WorkloadKind::Imagexform => "img",
    };
    if copies <= 1 {
        vec![base.to_string()]
    } else {
        (0..copies).map(|i| format!("{base}{i}")).collect()
    }
}

/// Program with `copies` instances of the workload lambda, numbered from
/// workload id 1. Deploying through the workload manager reassigns the ids.
pub fn build_workload_copies(
    kind: WorkloadKind,
    p: &WorkloadParams,
    copies: usize,
    model: &NicModel,
) -> Result<MLProgram, WorkloadError> {
    p.validate(model)?;
    let names = lambda_names(kind, copies);
    let mut text = String::new();
    if kind == WorkloadKind::Kvclient {
        text.push_str(KV_HEADER);
    }
    for n in &names {
        text.push_str(&match kind {
            WorkloadKind::Webserver => web_lambda(n, p),
            WorkloadKind::Kvclient => kv_lambda(n, 0),
            WorkloadKind::Imagexform => image_lambda(n),
        });
    }
    for (i, n) in names.iter().enumerate() {
        text.push_str(&format!(".rule {} {n}\n", i + 1));
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    text.push_str(&routes(&refs));
    parse(&text)
}

pub fn build_workload(kind: WorkloadKind, p: &WorkloadParams, model: &NicModel) -> Result<MLProgram, WorkloadError> {
    build_workload_copies(kind, p, 1, model)
}

/// Two KV clients sharing the query logic, a web server and an image
/// transformer, with one rule each.
pub fn benchmark_suite(p: &WorkloadParams, model: &NicModel) -> Result<MLProgram, WorkloadError> {
    p.validate(model)?;
    let mut text = String::from(KV_HEADER);
    text.push_str(&kv_lambda("kva", 0));
    text.push_str(&kv_lambda("kvb", 1));
    text.push_str(&web_lambda("web", p));
    text.push_str(&image_lambda("img"));
    text.push_str(".rule 1 kva\n.rule 2 kvb\n.rule 3 web\n.rule 4 img\n");
    text.push_str(&routes(&["kva", "kvb", "web", "img"]));
    parse(&text)
}

/// Random request payload for `kind`.
pub fn request_payload(kind: WorkloadKind, p: &WorkloadParams, rng: &mut impl RngCore) -> Vec<u8> {
    match kind {
        WorkloadKind::Webserver => b"GET /index.html".to_vec(),
        WorkloadKind::Kvclient => {
            let k = rng.gen_range(0..p.key_space);
            let key = kv_key(k, p.key_size);
            if rng.gen_bool(p.get_ratio) {
                KvMessage::get(&key).encode()
            } else {
                let mut v = vec![0u8; p.value_size as usize];
                rng.fill_bytes(&mut v);
                KvMessage::set(&key, &v).encode()
            }
        }
        WorkloadKind::Imagexform => {
            let mut img = vec![0u8; p.image_bytes() as usize];
            rng.fill_bytes(&mut img);
            img
        }
    }
}

/// Fixed-width key for index `k`, zero padded.
pub fn kv_key(k: u32, size: u16) -> Vec<u8> {
    let s = format!("key{k:0w$}", w = (size as usize).saturating_sub(3));
    let mut b = s.into_bytes();
    b.truncate(size as usize);
    b
}
