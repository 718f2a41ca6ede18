//! Control plane: workload registry, deployment, host backend and the
//! gateway simulation.

mod backend;
mod cluster;
mod host;
mod manager;
mod registry;
mod udp;

pub use backend::Backend;
pub use cluster::{Cluster, Failure, GatewayConfig, GatewayEvent, GatewayStats, LinkModel, RouteError, GATEWAY};
pub use host::{HostBackend, HostConfig};
pub use manager::{merge_programs, DeployError, Deployment, WorkloadManager};
pub use registry::{parse_journal, replay, Entry, Journal, JournalOp, Record, Registry, RegistryError, Status};
pub use udp::{invoke, ClientConfig, LoopbackServer, ServeStats};
