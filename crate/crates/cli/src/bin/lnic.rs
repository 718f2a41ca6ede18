//! Control plane: deploy programs, list the registry, invoke lambdas and
//! serve them over UDP.
//!
//! State lives in one directory: `registry.journal` plus the merged program
//! of every node under `nodes/<id>.mlp`.

use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use lnic_cli::{init_logging, load_model, read_program, show_bytes};
use lnic_core::bench::{KvStore, SharedKv};
use lnic_core::compiler::{compile, CompileOptions};
use lnic_core::control::{invoke, ClientConfig, Cluster, GatewayConfig, GatewayEvent, LinkModel, LoopbackServer, Status, WorkloadManager};
use lnic_core::emulator::{Nic, NicModel};
use lnic_core::ir::{print_program, MLProgram};
use lnic_core::SimTime;

#[derive(Parser)]
#[command(name = "lnic", about = "Manage lambdas on emulated SmartNICs")]
struct Cli {
    /// State directory.
    #[arg(long, default_value = ".lnic", global = true)]
    state: PathBuf,
    /// NIC description (`key = value` lines).
    #[arg(long, global = true)]
    nic: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile and deploy every lambda of a program onto the given nodes.
    Deploy {
        program: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        nodes: Vec<u16>,
        #[arg(long, default_value_t = 1)]
        opt: u8,
    },
    /// Show the registry.
    List,
    /// Send one request, in process or to a running `serve`.
    Invoke {
        name: String,
        /// Payload as text.
        #[arg(long, conflicts_with_all = ["hex", "file"])]
        data: Option<String>,
        /// Payload as hex.
        #[arg(long, conflicts_with = "file")]
        hex: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
        /// Address of a running `lnic serve`.
        #[arg(long)]
        server: Option<SocketAddr>,
        #[arg(long, default_value_t = 0)]
        node: u16,
        #[arg(long, default_value_t = 200)]
        timeout_ms: u64,
    },
    /// Serve a node's lambdas over UDP until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7070")]
        bind: SocketAddr,
        #[arg(long, default_value_t = 0)]
        node: u16,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
}

struct State {
    dir: PathBuf,
    model: NicModel,
}

impl State {
    fn journal(&self) -> PathBuf {
        self.dir.join("registry.journal")
    }

    fn node_path(&self, node: u16) -> PathBuf {
        self.dir.join("nodes").join(format!("{node}.mlp"))
    }

    fn manager(&self, opts: CompileOptions) -> Result<WorkloadManager> {
        std::fs::create_dir_all(self.dir.join("nodes")).with_context(|| format!("creating {}", self.dir.display()))?;
        let mut m = WorkloadManager::with_journal(self.model.clone(), opts, &self.journal())?;
        for e in std::fs::read_dir(self.dir.join("nodes"))? {
            let p = e?.path();
            let Some(node) = p.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u16>().ok()) else {
                continue;
            };
            m.restore(node, read_program(&p)?);
        }
        Ok(m)
    }

    fn node_program(&self, node: u16) -> Result<MLProgram> {
        let p = self.node_path(node);
        if !p.exists() {
            bail!("nothing deployed on node {node}");
        }
        read_program(&p)
    }

    fn boot(&self, node: u16) -> Result<Nic<SharedKv>> {
        let prog = self.node_program(node)?;
        let (fw, _) = compile(&prog, &self.model, &CompileOptions::default())?;
        let kv = SharedKv::new(KvStore::default());
        Ok(Nic::booted_with(self.model.clone(), fw, 1, kv)?)
    }
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn payload(data: Option<String>, hex_arg: Option<String>, file: Option<PathBuf>) -> Result<Vec<u8>> {
    Ok(match (data, hex_arg, file) {
        (Some(d), _, _) => d.into_bytes(),
        (_, Some(h), _) => hex::decode(h.trim()).context("--hex")?,
        (_, _, Some(f)) => std::fs::read(&f).with_context(|| format!("reading {}", f.display()))?,
        _ => Vec::new(),
    })
}

fn main() -> Result<()> {
    init_logging();
    let cli = Cli::parse();
    let st = State {
        dir: cli.state,
        model: load_model(cli.nic.as_deref())?,
    };
    match cli.cmd {
        Cmd::Deploy { program, nodes, opt } => {
            let prog = read_program(&program)?;
            let mut m = st.manager(CompileOptions::opt(opt))?;
            let d = m.deploy(&prog, &nodes)?;
            for (node, p) in &d.programs {
                write_atomic(&st.node_path(*node), &print_program(p))?;
                println!("node {node}: {} instructions", d.firmware[node].total_instructions());
            }
            for l in &prog.lambdas {
                println!("{}\t{}", l.name, d.mapping[&l.name]);
            }
        }
        Cmd::List => {
            let m = st.manager(CompileOptions::default())?;
            println!("name\tid\tstatus\tnodes\tdigest");
            for (name, e) in m.registry().entries() {
                let status = match e.status {
                    Status::Allocated => "allocated",
                    Status::Deployed => "deployed",
                    Status::Retired => "retired",
                };
                let nodes: Vec<String> = e.nodes.iter().map(|n| n.to_string()).collect();
                println!("{name}\t{}\t{status}\t{}\t{}", e.id, nodes.join(","), hex::encode(&e.digest[..8]));
            }
        }
        Cmd::Invoke {
            name,
            data,
            hex,
            file,
            server,
            node,
            timeout_ms,
        } => {
            let body = payload(data, hex, file)?;
            let m = st.manager(CompileOptions::default())?;
            let e = m.registry().get(&name).ok_or_else(|| anyhow!("no workload named `{name}`"))?;
            if e.status == Status::Retired {
                bail!("`{name}` is retired");
            }
            let out = match server {
                Some(addr) => {
                    let cfg = ClientConfig {
                        timeout: Duration::from_millis(timeout_ms),
                        mtu: st.model.mtu,
                        ..ClientConfig::default()
                    };
                    invoke(addr, e.id, 1, &body, &cfg).with_context(|| format!("invoking {name} at {addr}"))?
                }
                None => {
                    let nic = st.boot(node)?;
                    let mut c = Cluster::new(vec![nic], LinkModel::default(), GatewayConfig::default(), 1);
                    c.set_mapping([(name.clone(), e.id)].into_iter().collect(), &[0]);
                    c.submit(SimTime::ZERO, &name, &body)?;
                    match c.run_to_idle().into_iter().next() {
                        Some(GatewayEvent::Completed { payload, at, retries, .. }) => {
                            eprintln!("completed in {at} virtual, {retries} retries");
                            payload
                        }
                        Some(GatewayEvent::Failed { failure, .. }) => bail!("request failed: {failure:?}"),
                        None => bail!("no response"),
                    }
                }
            };
            // a closed pipe (`| head`) is not an error worth reporting
            let _ = writeln!(std::io::stdout(), "{}", show_bytes(&out));
        }
        Cmd::Serve { bind, node, workers } => {
            // fail early on a missing or broken node program
            let nic = st.boot(node)?;
            let server = LoopbackServer::start(bind, nic, workers)?;
            println!("serving node {node} on {}", server.local_addr());
            server.join();
        }
    }
    Ok(())
}
