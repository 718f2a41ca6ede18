//! Fixtures for the criterion benches.

use lnic_core::bench::{benchmark_suite, WorkloadParams};
use lnic_core::emulator::NicModel;
use lnic_core::ir::{print_program, MLProgram};
use lnic_core::model::LambdaFrame;
use lnic_core::SimTime;

/// The four-lambda suite (two KV clients, web server, image transformer).
pub fn suite() -> MLProgram {
    benchmark_suite(&WorkloadParams::default(), &NicModel::default()).expect("default suite builds")
}

pub fn suite_text() -> String {
    print_program(&suite())
}

/// `n` single-frame web requests (workload id 3 in the suite), 100 ns apart.
pub fn web_schedule(n: u64) -> Vec<(SimTime, u32, LambdaFrame)> {
    (0..n)
        .map(|i| (SimTime(i * 100), (i % 4) as u32 + 1, LambdaFrame::request(3, i + 1, Vec::new())))
        .collect()
}
