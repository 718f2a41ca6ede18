//! Load generators driving a one-node cluster in virtual time.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kv::{KvStore, SharedKv};
use super::metrics::{comparison_table, Metrics};
use super::workloads::{build_workload_copies, lambda_names, request_payload, WorkloadError, WorkloadKind, WorkloadParams};
use crate::compiler::{CompileOptions, CompileReport};
use crate::control::{
    Backend, Cluster, DeployError, GatewayConfig, GatewayEvent, HostBackend, HostConfig, LinkModel, RouteError,
    WorkloadManager,
};
use crate::emulator::{trace_text, LoadError, Nic, NicModel, TraceRecord};
use crate::model::RequestId;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackendKind {
    Nic,
    Host,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Nic => "nic",
            BackendKind::Host => "host",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nic" => Ok(BackendKind::Nic),
            "host" => Ok(BackendKind::Host),
            _ => Err(format!("unknown backend `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Next request at the completion of the previous one.
    Closed,
    /// `parallel` requests outstanding.
    Par56,
    /// Closed loop rotating over three copies of the lambda.
    RrMulti,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Closed => "closed",
            Mode::Par56 => "par56",
            Mode::RrMulti => "rrmulti",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "closed" => Ok(Mode::Closed),
            "par56" => Ok(Mode::Par56),
            "rrmulti" => Ok(Mode::RrMulti),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub workload: WorkloadKind,
    pub params: WorkloadParams,
    pub backend: BackendKind,
    pub mode: Mode,
    pub n: usize,
    pub seed: u64,
    pub model: NicModel,
    pub host: HostConfig,
    pub link: LinkModel,
    pub gateway: GatewayConfig,
    pub opts: CompileOptions,
    /// Outstanding requests in `Par56` mode.
    pub parallel: usize,
    pub kv_latency: SimTime,
}

impl BenchConfig {
    pub fn new(workload: WorkloadKind, backend: BackendKind, mode: Mode, n: usize, seed: u64) -> Self {
        BenchConfig {
            workload,
            params: WorkloadParams::default(),
            backend,
            mode,
            n,
            seed,
            model: NicModel::default(),
            host: HostConfig::default(),
            link: LinkModel::default(),
            gateway: GatewayConfig::default(),
            opts: CompileOptions::default(),
            parallel: 56,
            kv_latency: SimTime::from_micros(20),
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Deploy(#[from] DeployError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub metrics: Metrics,
    /// Backend trace, one record per request (plus drop records).
    pub trace: Vec<TraceRecord>,
    pub events: Vec<GatewayEvent>,
    pub report: CompileReport,
    /// Lambda name per request id.
    pub issued: Vec<(RequestId, String)>,
}

impl BenchRun {
    /// Writes `trace.tsv`, `ecdf.tsv` and `summary.tsv` into `dir`.
    pub fn write_outputs(&self, dir: &Path, label: &str) -> Result<(), BenchError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| BenchError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let files = [
            ("trace.tsv", trace_text(&self.trace)),
            ("ecdf.tsv", self.metrics.ecdf_text()),
            ("summary.tsv", comparison_table(&[(label, &self.metrics)])),
            ("passes.tsv", self.report.to_tsv()),
        ];
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(io(&p))?;
        }
        Ok(())
    }
}

/// Builds the workload, deploys it on one node of the chosen backend and
/// drives `cfg.n` requests through the gateway.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchRun, BenchError> {
    let copies = if cfg.mode == Mode::RrMulti { 3 } else { 1 };
    let prog = build_workload_copies(cfg.workload, &cfg.params, copies, &cfg.model)?;
    let mut mgr = WorkloadManager::new(cfg.model.clone(), cfg.opts);
    let dep = mgr.deploy(&prog, &[0])?;
    let kv = SharedKv::new(KvStore::new(cfg.kv_latency));
    let node: Box<dyn Backend> = match cfg.backend {
        BackendKind::Nic => Box::new(Nic::booted_with(
            cfg.model.clone(),
            dep.firmware[&0].clone(),
            cfg.seed,
            kv.clone(),
        )?),
        BackendKind::Host => Box::new(HostBackend::loaded(
            cfg.host.clone(),
            dep.programs[&0].clone(),
            cfg.seed,
            kv.clone(),
        )),
    };
    let mut cluster = Cluster::new(vec![node], cfg.link.clone(), cfg.gateway.clone(), cfg.seed);
    cluster.set_mapping(dep.mapping.clone(), &[0]);

    let names = lambda_names(cfg.workload, copies);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005E_ED0F_10AD);
    let mut metrics = Metrics::default();
    let mut events = Vec::new();
    let mut issued = Vec::new();
    let mut next = 0usize;
    let mut submit = |cluster: &mut Cluster<Box<dyn Backend>>, k: usize, at: SimTime| -> Result<(), BenchError> {
        let name = &names[k % names.len()];
        let payload = request_payload(cfg.workload, &cfg.params, &mut rng);
        let rid = cluster.submit(at, name, &payload)?;
        issued.push((rid, name.clone()));
        Ok(())
    };
    let window = match cfg.mode {
        Mode::Par56 => cfg.parallel.max(1),
        Mode::Closed | Mode::RrMulti => 1,
    };
    for _ in 0..window.min(cfg.n) {
        submit(&mut cluster, next, SimTime::ZERO)?;
        next += 1;
    }
    while !cluster.is_idle() {
        for e in cluster.step() {
            match &e {
                GatewayEvent::Completed {
                    submitted, at, retries, ..
                } => metrics.record(*submitted, *at, *retries),
                GatewayEvent::Failed { .. } => metrics.failed += 1,
            }
            let at = e.at();
            events.push(e);
            if next < cfg.n {
                submit(&mut cluster, next, at)?;
                next += 1;
            }
        }
    }
    let trace: Vec<TraceRecord> = cluster.take_traces().into_iter().flatten().collect();
    metrics.drops = trace.iter().filter(|t| t.outcome.is_dropped()).count() as u64;
    Ok(BenchRun {
        metrics,
        trace,
        events,
        report: dep.reports[&0].clone(),
        issued,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_loop_web_is_complete() {
        let r = run_benchmark(&BenchConfig::new(WorkloadKind::Webserver, BackendKind::Nic, Mode::Closed, 200, 1)).unwrap();
        assert_eq!(r.trace.len(), 200);
        assert_eq!(r.metrics.completed(), 200);
        assert_eq!(r.metrics.drops, 0);
        // closed loop: never more than one request in flight
        for w in r.trace.windows(2) {
            assert!(w[1].t_arrive >= w[0].t_complete);
        }
    }

    #[test]
    fn par56_host_queueing() {
        let mut cfg = BenchConfig::new(WorkloadKind::Webserver, BackendKind::Host, Mode::Par56, 56, 2);
        let queued = |cfg: &BenchConfig| {
            let r = run_benchmark(cfg).unwrap();
            r.trace.iter().filter(|t| t.t_dispatch > t.t_arrive).count()
        };
        assert_eq!(queued(&cfg), 0);
        cfg.host.threads = 28;
        assert_eq!(queued(&cfg), 28);
    }

    #[test]
    fn all_workloads_run_on_both_backends() {
        for w in WorkloadKind::ALL {
            for b in [BackendKind::Nic, BackendKind::Host] {
                for m in [Mode::Closed, Mode::Par56, Mode::RrMulti] {
                    let r = run_benchmark(&BenchConfig::new(w, b, m, 30, 3)).unwrap();
                    assert_eq!(r.metrics.completed(), 30, "{w} {b} {m}");
                    assert!(r.trace.iter().all(|t| t.outcome.is_completed()), "{w} {b} {m}");
                }
            }
        }
    }
}
