use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use lnic_bench::{suite, suite_text, web_schedule};
use lnic_core::bench::{run_benchmark, BackendKind, BenchConfig, Mode, WorkloadKind};
use lnic_core::compiler::{compile, CompileOptions};
use lnic_core::emulator::{run, NicModel};
use lnic_core::ir::{parse_program, FlatStore, Interpreter, NoServices};
use lnic_core::model::MatchData;
use lnic_core::SimTime;

fn frontend(c: &mut Criterion) {
    let text = suite_text();
    c.bench_function("parse_suite", |b| b.iter(|| parse_program(&text).unwrap()));
    let prog = suite();
    let model = NicModel::default();
    for opt in [0u8, 1] {
        c.bench_function(&format!("compile_suite_opt{opt}"), |b| {
            b.iter(|| compile(&prog, &model, &CompileOptions::opt(opt)).unwrap())
        });
    }
}

fn execution(c: &mut Criterion) {
    let prog = suite();
    let web = prog.lambda("web").unwrap();
    let md = MatchData {
        source: 1,
        arrival: SimTime::ZERO,
        payload_len: 0,
    };
    c.bench_function("interpret_web", |b| {
        b.iter_batched(
            || FlatStore::for_lambda(web),
            |mut store| Interpreter::new(&prog, web).run(&[], &md, &mut store, &mut NoServices),
            BatchSize::SmallInput,
        )
    });
    let model = NicModel::default();
    let (fw, _) = compile(&prog, &model, &CompileOptions::opt(1)).unwrap();
    let sched = web_schedule(1000);
    c.bench_function("emulate_1000_web", |b| b.iter(|| run(&model, &fw, &sched, 1).unwrap()));
}

fn end_to_end(c: &mut Criterion) {
    let mut g = c.benchmark_group("closed_loop_200");
    g.sample_size(10);
    for backend in [BackendKind::Nic, BackendKind::Host] {
        let cfg = BenchConfig::new(WorkloadKind::Webserver, backend, Mode::Closed, 200, 1);
        g.bench_function(backend.name(), |b| b.iter(|| run_benchmark(&cfg).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, frontend, execution, end_to_end);
criterion_main!(benches);
