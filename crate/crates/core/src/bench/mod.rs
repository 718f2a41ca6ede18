//! Benchmark workloads, the KV store they talk to, load generation and
//! reporting.

mod harness;
mod kv;
mod metrics;
mod workloads;

pub use harness::{run_benchmark, BackendKind, BenchConfig, BenchError, BenchRun, Mode};
pub use kv::{KvError, KvMessage, KvOp, KvStore, SharedKv, KV_ENDPOINT, KV_HEADER_LEN};
pub use metrics::{comparison_table, nearest_rank, ratios, Metrics, Ratios, EMPTY_MARKER};
pub use workloads::{
    benchmark_suite, build_workload, build_workload_copies, image_lambda, kv_key, kv_lambda, lambda_names,
    request_payload, web_lambda, WorkloadError, WorkloadKind, WorkloadParams, KV_HEADER,
};
