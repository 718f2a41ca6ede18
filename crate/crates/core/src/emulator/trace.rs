//! Per-request trace records and their line format.
//!
//! One record per line, tab separated:
//! `request_id workload_id t_arrive t_dispatch t_complete cycles instructions outcome frames core`
//! with times in nanoseconds and `-` for a missing core.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{RequestId, WorkloadId};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    /// Lambda returned `rc` (FORWARD responded, DROP did not).
    Completed { rc: i32 },
    /// Lambda trapped; `rc` is the trap code.
    Trapped { rc: i32 },
    /// Unmatched workload id or TO_HOST: forwarded to the host.
    ToHost,
    DroppedDowntime,
    DroppedTimeout,
    /// Frame already held by an in-progress reassembly.
    Duplicate,
}

impl Outcome {
    pub fn is_completed(&self) -> bool {
        matches!(self, Outcome::Completed { .. })
    }

    pub fn is_dropped(&self) -> bool {
        matches!(self, Outcome::DroppedDowntime | Outcome::DroppedTimeout)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Completed { rc } => write!(f, "ok:{rc:#x}"),
            Outcome::Trapped { rc } => write!(f, "trap:{rc:#x}"),
            Outcome::ToHost => f.write_str("host"),
            Outcome::DroppedDowntime => f.write_str("drop-downtime"),
            Outcome::DroppedTimeout => f.write_str("drop-timeout"),
            Outcome::Duplicate => f.write_str("dup"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad trace line: {0}")]
pub struct TraceParseError(pub String);

fn parse_rc(s: &str) -> Option<i32> {
    i32::from_str_radix(s.strip_prefix("0x")?, 16).ok()
}

impl FromStr for Outcome {
    type Err = TraceParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TraceParseError(s.to_string());
        Ok(match s {
            "host" => Outcome::ToHost,
            "drop-downtime" => Outcome::DroppedDowntime,
            "drop-timeout" => Outcome::DroppedTimeout,
            "dup" => Outcome::Duplicate,
            _ => {
                if let Some(rc) = s.strip_prefix("ok:") {
                    Outcome::Completed { rc: parse_rc(rc).ok_or_else(bad)? }
                } else if let Some(rc) = s.strip_prefix("trap:") {
                    Outcome::Trapped { rc: parse_rc(rc).ok_or_else(bad)? }
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub request_id: RequestId,
    pub workload_id: WorkloadId,
    pub t_arrive: SimTime,
    pub t_dispatch: SimTime,
    pub t_complete: SimTime,
    pub cycles: u64,
    pub instructions: u64,
    pub outcome: Outcome,
    /// Frames accounted for by this record.
    pub frames: u16,
    pub core: Option<u32>,
}

impl TraceRecord {
    pub fn latency(&self) -> SimTime {
        self.t_complete.saturating_sub(self.t_arrive)
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.request_id,
            self.workload_id,
            self.t_arrive.as_nanos(),
            self.t_dispatch.as_nanos(),
            self.t_complete.as_nanos(),
            self.cycles,
            self.instructions,
            self.outcome,
            self.frames,
            self.core.map_or("-".to_string(), |c| c.to_string()),
        )
    }

    pub fn parse_line(line: &str) -> Result<Self, TraceParseError> {
        let bad = || TraceParseError(line.to_string());
        let f: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        if f.len() != 10 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad());
        Ok(TraceRecord {
            request_id: num(f[0])?,
            workload_id: f[1].parse().map_err(|_| bad())?,
            t_arrive: SimTime(num(f[2])?),
            t_dispatch: SimTime(num(f[3])?),
            t_complete: SimTime(num(f[4])?),
            cycles: num(f[5])?,
            instructions: num(f[6])?,
            outcome: f[7].parse()?,
            frames: f[8].parse().map_err(|_| bad())?,
            core: if f[9] == "-" {
                None
            } else {
                Some(f[9].parse().map_err(|_| bad())?)
            },
        })
    }
}

/// Serializes records one per line.
pub fn trace_text(records: &[TraceRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceParseError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(TraceRecord::parse_line)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_round_trip() {
        let r = TraceRecord {
            request_id: 7,
            workload_id: 3,
            t_arrive: SimTime(10),
            t_dispatch: SimTime(10),
            t_complete: SimTime(900),
            cycles: 512,
            instructions: 140,
            outcome: Outcome::Trapped { rc: 0xE2 },
            frames: 4,
            core: Some(12),
        };
        assert_eq!(r.to_line(), "7\t3\t10\t10\t900\t512\t140\ttrap:0xe2\t4\t12");
        assert_eq!(TraceRecord::parse_line(&r.to_line()).unwrap(), r);
        let d = TraceRecord {
            outcome: Outcome::DroppedDowntime,
            core: None,
            ..r
        };
        assert_eq!(parse_trace(&trace_text(std::slice::from_ref(&d))).unwrap(), vec![d]);
        assert!(TraceRecord::parse_line("1\t2").is_err());
        assert_eq!("ok:0x10".parse::<Outcome>().unwrap(), Outcome::Completed { rc: 16 });
    }
}
