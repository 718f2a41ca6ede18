//! Latency statistics, ECDF points and the comparison table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

/// Written instead of a table when no request completed.
pub const EMPTY_MARKER: &str = "# empty: no completed requests";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Per-request latency in nanoseconds, in completion order.
    pub latencies_ns: Vec<u64>,
    pub failed: u64,
    pub retries: u64,
    pub drops: u64,
    pub first_arrival: Option<SimTime>,
    pub last_completion: Option<SimTime>,
}

/// Nearest-rank percentile of an ascending sample: the value at rank
/// `ceil(p/100 * n)`.
pub fn nearest_rank(sorted: &[u64], p: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

impl Metrics {
    pub fn record(&mut self, submitted: SimTime, done: SimTime, retries: u32) {
        self.latencies_ns.push(done.saturating_sub(submitted).as_nanos());
        self.retries += retries as u64;
        self.first_arrival = Some(self.first_arrival.map_or(submitted, |t| t.min(submitted)));
        self.last_completion = Some(self.last_completion.map_or(done, |t| t.max(done)));
    }

    pub fn from_latencies(ns: &[u64]) -> Self {
        let mut m = Metrics::default();
        let mut t = SimTime::ZERO;
        for &l in ns {
            m.record(t, t + SimTime::from_nanos(l), 0);
            t += SimTime::from_nanos(l);
        }
        m
    }

    pub fn completed(&self) -> usize {
        self.latencies_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latencies_ns.is_empty()
    }

    fn sorted(&self) -> Vec<u64> {
        let mut v = self.latencies_ns.clone();
        v.sort_unstable();
        v
    }

    pub fn mean_ns(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        Some(self.latencies_ns.iter().map(|&x| x as f64).sum::<f64>() / self.completed() as f64)
    }

    pub fn percentile_ns(&self, p: f64) -> Option<u64> {
        nearest_rank(&self.sorted(), p)
    }

    /// Completed requests per virtual second, from first arrival to last completion.
    pub fn throughput(&self) -> Option<f64> {
        let (a, b) = (self.first_arrival?, self.last_completion?);
        let span = b.saturating_sub(a).as_secs_f64();
        (span > 0.0).then(|| self.completed() as f64 / span)
    }

    /// (latency, cumulative fraction) at every distinct latency.
    pub fn ecdf(&self) -> Vec<(u64, f64)> {
        let s = self.sorted();
        let n = s.len() as f64;
        let mut out: Vec<(u64, f64)> = Vec::new();
        for (i, &v) in s.iter().enumerate() {
            let f = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 = f,
                _ => out.push((v, f)),
            }
        }
        out
    }

    /// `latency_us<TAB>fraction` lines, or the empty marker.
    pub fn ecdf_text(&self) -> String {
        if self.is_empty() {
            return format!("{EMPTY_MARKER}\n");
        }
        let mut s = String::from("latency_us\tfraction\n");
        for (v, f) in self.ecdf() {
            let _ = writeln!(s, "{:.3}\t{f:.6}", v as f64 / 1e3);
        }
        s
    }
}

fn us(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{:.3}", x / 1e3))
}

/// Tab-separated table, one row per backend.
pub fn comparison_table(rows: &[(&str, &Metrics)]) -> String {
    if rows.iter().all(|(_, m)| m.is_empty()) {
        return format!("{EMPTY_MARKER}\n");
    }
    let mut s = String::from("backend\tn\tmean_us\tp50_us\tp90_us\tp99_us\tthroughput_rps\tretries\tfailed\n");
    for (name, m) in rows {
        let p = |q| us(m.percentile_ns(q).map(|v| v as f64));
        let _ = writeln!(
            s,
            "{name}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.completed(),
            us(m.mean_ns()),
            p(50.0),
            p(90.0),
            p(99.0),
            m.throughput().map_or("-".into(), |t| format!("{t:.1}")),
            m.retries,
            m.failed,
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub mean: Option<f64>,
    pub p50: Option<f64>,
    pub p99: Option<f64>,
    pub throughput: Option<f64>,
}

fn ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if b != 0.0 => Some(a / b),
        _ => None,
    }
}

/// `a / b` for each statistic; `None` where either side is missing or zero.
pub fn ratios(a: &Metrics, b: &Metrics) -> Ratios {
    let p = |m: &Metrics, q| m.percentile_ns(q).map(|v| v as f64);
    Ratios {
        mean: ratio(a.mean_ns(), b.mean_ns()),
        p50: ratio(p(a, 50.0), p(b, 50.0)),
        p99: ratio(p(a, 99.0), p(b, 99.0)),
        throughput: ratio(a.throughput(), b.throughput()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nearest_rank_examples() {
        let m = Metrics::from_latencies(&[4000, 1000, 3000, 2000]);
        assert_eq!(m.percentile_ns(50.0), Some(2000));
        assert_eq!(m.percentile_ns(99.0), Some(4000));
        assert_eq!(m.percentile_ns(0.0), Some(1000));
        assert_eq!(m.mean_ns(), Some(2500.0));
        assert_eq!(nearest_rank(&[], 50.0), None);
    }

    #[test]
    fn identical_samples_give_unit_ratios() {
        let a = Metrics::from_latencies(&[5, 9, 11, 100]);
        let r = ratios(&a, &a.clone());
        assert_eq!((r.mean, r.p50, r.p99, r.throughput), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn empty_report() {
        let e = Metrics::default();
        assert_eq!(comparison_table(&[("nic", &e)]), format!("{EMPTY_MARKER}\n"));
        assert!(e.ecdf_text().starts_with("# empty"));
        assert_eq!(e.throughput(), None);
        assert_eq!(ratios(&e, &e).mean, None);
    }

    #[test]
    fn table_and_ecdf() {
        let m = Metrics::from_latencies(&[1000, 1000, 3000]);
        let t = comparison_table(&[("host", &m)]);
        assert!(t.lines().nth(1).unwrap().starts_with("host\t3\t1.667\t1.000\t3.000\t3.000\t"));
        assert_eq!(m.ecdf().len(), 2);
        assert!((m.ecdf()[0].1 - 2.0 / 3.0).abs() < 1e-12);
        assert!(m.throughput().unwrap() > 0.0);
    }

    proptest! {
        #[test]
        fn percentiles_are_sample_members(v in proptest::collection::vec(0u64..1_000_000, 1..200), p in 0.0f64..=100.0) {
            let m = Metrics::from_latencies(&v);
            let x = m.percentile_ns(p).unwrap();
            prop_assert!(v.contains(&x));
            let below = v.iter().filter(|&&y| y <= x).count() as f64;
            prop_assert!(below >= (p / 100.0 * v.len() as f64).floor());
            let e = m.ecdf();
            prop_assert!((e.last().unwrap().1 - 1.0).abs() < 1e-12);
        }
    }
}
