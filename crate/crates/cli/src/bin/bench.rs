//! Benchmark driver: one backend (`run`) or both side by side (`compare`).

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lnic_cli::{init_logging, load_model};
use lnic_core::bench::{
    comparison_table, ratios, run_benchmark, BackendKind, BenchConfig, BenchRun, Mode, WorkloadKind,
};
use lnic_core::compiler::CompileOptions;
use lnic_core::SimTime;

#[derive(Parser)]
#[command(name = "bench", about = "Drive benchmark workloads through the emulated NIC or the host baseline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one backend and write trace, ECDF and summary files.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "nic")]
        backend: BackendKind,
    },
    /// Run both backends and print the ratios between them.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    workload: WorkloadKind,
    #[arg(long, default_value = "closed")]
    mode: Mode,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    nic: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    opt: u8,
    #[arg(long)]
    content_size: Option<u32>,
    #[arg(long)]
    key_size: Option<u16>,
    #[arg(long)]
    value_size: Option<u16>,
    #[arg(long)]
    get_ratio: Option<f64>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Host worker threads.
    #[arg(long)]
    threads: Option<u32>,
    /// Injected frame loss on the gateway links.
    #[arg(long, default_value_t = 0.0)]
    drop: f64,
    /// KV store service time in microseconds.
    #[arg(long)]
    kv_latency_us: Option<u64>,
}

impl Common {
    fn config(&self, backend: BackendKind) -> Result<BenchConfig> {
        let mut c = BenchConfig::new(self.workload, backend, self.mode, self.n, self.seed);
        c.model = load_model(self.nic.as_deref())?;
        c.opts = CompileOptions::opt(self.opt);
        let p = &mut c.params;
        if let Some(v) = self.content_size {
            p.content_size = v;
        }
        if let Some(v) = self.key_size {
            p.key_size = v;
        }
        if let Some(v) = self.value_size {
            p.value_size = v;
        }
        if let Some(v) = self.get_ratio {
            p.get_ratio = v;
        }
        if let Some(v) = self.width {
            p.width = v;
        }
        if let Some(v) = self.height {
            p.height = v;
        }
        if let Some(t) = self.threads {
            c.host.threads = t;
        }
        if let Some(us) = self.kv_latency_us {
            c.kv_latency = SimTime::from_micros(us);
        }
        c.link.drop = self.drop;
        Ok(c)
    }
}

fn run_one(c: &Common, backend: BackendKind, dir: &Path) -> Result<BenchRun> {
    let run = run_benchmark(&c.config(backend)?)
        .with_context(|| format!("{} on {backend}", c.workload))?;
    run.write_outputs(dir, backend.name())?;
    log::info!("{backend}: {} completed, {} failed", run.metrics.completed(), run.metrics.failed);
    Ok(run)
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map_or("-".into(), |v| format!("{v:.3}"))
}

fn main() -> Result<()> {
    init_logging();
    match Cli::parse().cmd {
        Cmd::Run { common, backend } => {
            let run = run_one(&common, backend, &common.out)?;
            print!("{}", comparison_table(&[(backend.name(), &run.metrics)]));
            println!("outputs in {}", common.out.display());
        }
        Cmd::Compare { common } => {
            let nic = run_one(&common, BackendKind::Nic, &common.out.join("nic"))?;
            let host = run_one(&common, BackendKind::Host, &common.out.join("host"))?;
            let table = comparison_table(&[("nic", &nic.metrics), ("host", &host.metrics)]);
            let r = ratios(&host.metrics, &nic.metrics);
            let ratio_rows = format!(
                "host/nic\tmean {}\tp50 {}\tp99 {}\nnic/host\tthroughput {}\n",
                fmt_ratio(r.mean),
                fmt_ratio(r.p50),
                fmt_ratio(r.p99),
                fmt_ratio(r.throughput.map(|t| 1.0 / t)),
            );
            let p = common.out.join("comparison.tsv");
            std::fs::write(&p, &table).with_context(|| format!("writing {}", p.display()))?;
            print!("{table}{ratio_rows}");
        }
    }
    Ok(())
}
