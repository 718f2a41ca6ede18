//! Match+Lambda compiler driver.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use lnic_cli::{init_logging, load_model, read_program};
use lnic_core::bench::{benchmark_suite, build_workload, WorkloadKind, WorkloadParams};
use lnic_core::compiler::{compile, CompileOptions};
use lnic_core::emulator::NicModel;
use lnic_core::ir::print_program;

#[derive(Parser)]
#[command(name = "mlc", about = "Compile Match+Lambda programs to NIC firmware")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate, optimize and lower a program.
    Build {
        program: PathBuf,
        /// NIC description (`key = value` lines); defaults to the built-in model.
        #[arg(long)]
        nic: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        opt: u8,
        /// Per-pass instruction totals, tab separated.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Firmware image as JSON.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Leave out isolation guards.
        #[arg(long)]
        no_guards: bool,
    },
    /// Print a built-in benchmark workload as program text.
    Emit {
        #[arg(long)]
        workload: Option<WorkloadKind>,
        /// The four-lambda optimizer suite instead of a single workload.
        #[arg(long, conflicts_with = "workload")]
        suite: bool,
    },
}

fn main() -> Result<()> {
    init_logging();
    match Cli::parse().cmd {
        Cmd::Build {
            program,
            nic,
            opt,
            report,
            out,
            no_guards,
        } => {
            if opt > 1 {
                bail!("--opt must be 0 or 1");
            }
            let model = load_model(nic.as_deref())?;
            let prog = read_program(&program)?;
            let opts = CompileOptions {
                guards: !no_guards,
                ..CompileOptions::opt(opt)
            };
            let (fw, rep) = compile(&prog, &model, &opts).with_context(|| format!("compiling {}", program.display()))?;
            if let Some(p) = &report {
                std::fs::write(p, rep.to_tsv()).with_context(|| format!("writing {}", p.display()))?;
            }
            if let Some(p) = &out {
                let json = serde_json::to_string_pretty(&fw)?;
                std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?;
            }
            println!("{}: opt {opt}, {} lambdas, {} instructions", program.display(), fw.lambdas.len(), fw.total_instructions());
            print!("{}", rep.to_tsv());
            if let Some(c) = &rep.coalesce {
                for h in &c.shared {
                    let by: Vec<String> = h.members.iter().map(|(l, f)| format!("{l}::{f}")).collect();
                    println!("shared helper {} ({} instructions) replaces {}", h.name, h.instructions, by.join(", "));
                }
            }
            for p in &rep.placement.entries {
                println!("place {}.{} {} bytes -> {} @ {:#x}", p.lambda, p.object, p.size, p.tier, p.base);
            }
            println!("guards {}, digest {}", rep.guards, rep.digest);
            for w in &rep.warnings {
                log::warn!("{w}");
            }
            Ok(())
        }
        Cmd::Emit { workload, suite } => {
            let (p, m) = (WorkloadParams::default(), NicModel::default());
            let prog = match (workload, suite) {
                (_, true) => benchmark_suite(&p, &m)?,
                (Some(w), false) => build_workload(w, &p, &m)?,
                (None, false) => bail!("pass --workload or --suite"),
            };
            print!("{}", print_program(&prog));
            Ok(())
        }
    }
}
