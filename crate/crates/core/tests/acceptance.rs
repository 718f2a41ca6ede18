//! Acceptance checks. Each test prints one `criterion N ... PASS|FAIL` line.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use lnic_core::bench::{
    benchmark_suite, build_workload, run_benchmark, BackendKind, BenchConfig, KvMessage, KvStore, Mode, SharedKv,
    WorkloadKind, WorkloadParams,
};
use lnic_core::compiler::{compile, CompileOptions, Firmware};
use lnic_core::control::{
    parse_journal, replay, Cluster, GatewayConfig, GatewayEvent, Journal, LinkModel, WorkloadManager,
};
use lnic_core::emulator::{ExecResult, Exit, Nic, NicModel, NicOutput, Outcome, TraceRecord};
use lnic_core::ir::{parse_program, rc, Echo, FlatStore, Interpreter, MLProgram, Services, Trap};
use lnic_core::model::{
    encode_frame, fragment, Endpoint, FrameFlags, LambdaFrame, MatchData, FRAME_HEADER_LEN,
};
use lnic_core::SimTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    println!("criterion {n:>2} {name:<28} {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn firmware(prog: &MLProgram, opt: u8) -> Firmware {
    compile(prog, &NicModel::default(), &CompileOptions::opt(opt))
        .unwrap_or_else(|e| panic!("compile at opt {opt}: {e}"))
        .0
}

fn deployed(text: &str, model: &NicModel) -> (lnic_core::control::Deployment, WorkloadManager) {
    let mut m = WorkloadManager::new(model.clone(), CompileOptions::default());
    let d = m.deploy(&parse_program(text).unwrap(), &[0]).unwrap();
    (d, m)
}

// ---------------------------------------------------------------- 1

#[derive(Debug, PartialEq, Eq)]
struct Observed {
    exit: Exit,
    rc: Option<i32>,
    response: Vec<u8>,
    sent: Option<(Endpoint, Vec<u8>)>,
    emitted: Vec<(Endpoint, Vec<u8>)>,
}

const ECHO_LATENCY: SimTime = SimTime(1_000);

/// Independent oracle: the reference interpreter plus the match stage read
/// straight off the program.
fn oracle(
    prog: &MLProgram,
    stores: &mut BTreeMap<String, FlatStore>,
    wid: u32,
    src: Endpoint,
    payload: &[u8],
) -> Observed {
    let Some(name) = prog.stage.dispatch(wid) else {
        return Observed {
            exit: Exit::ToHost,
            rc: None,
            response: vec![],
            sent: None,
            emitted: vec![],
        };
    };
    let l = prog.lambda(name).unwrap();
    let md = MatchData {
        source: src,
        arrival: SimTime::ZERO,
        payload_len: payload.len() as u32,
    };
    let store = stores.get_mut(name).unwrap();
    let mut echo = Echo { latency: ECHO_LATENCY };
    let ex = Interpreter::new(prog, l).run(payload, &md, store, &mut echo as &mut dyn Services);
    let emitted = ex.emitted.iter().map(|e| (e.endpoint, e.bytes.clone())).collect();
    let (exit, rcv) = match ex.result {
        Err(t) => (Exit::Trap(t), t.rc()),
        Ok(v) if v == rc::DROP => (Exit::Drop, v),
        Ok(v) if v == rc::TO_HOST => (Exit::ToHost, v),
        Ok(v) => {
            let egress = prog
                .stage
                .routes
                .get(name)
                .and_then(|rs| rs.iter().find(|r| r.key == src))
                .map_or(src, |r| r.egress);
            (Exit::Respond { egress }, v)
        }
    };
    let sent = match exit {
        Exit::Respond { egress } => Some((egress, ex.response.clone())),
        _ => None,
    };
    Observed {
        exit,
        rc: Some(rcv),
        response: ex.response,
        sent,
        emitted,
    }
}

fn observe(nic: &mut Nic<Echo>, rid: u64, wid: u32, src: Endpoint, payload: &[u8]) -> Observed {
    let at = nic.now() + SimTime(10);
    nic.ingest(at, src, LambdaFrame::request(wid, rid, payload.to_vec()));
    let mut res: Option<ExecResult> = None;
    let mut sent = None;
    for o in nic.run_to_idle() {
        match o {
            NicOutput::Executed(c) => res = Some(c.result),
            NicOutput::Response { dst, mut frames, .. } => {
                frames.sort_by_key(|f| f.seq);
                sent = Some((dst, frames.into_iter().flat_map(|f| f.payload).collect()));
            }
            NicOutput::ToHost { .. } => {}
        }
    }
    nic.take_trace();
    match res {
        None => Observed {
            exit: Exit::ToHost,
            rc: None,
            response: vec![],
            sent,
            emitted: vec![],
        },
        Some(r) => Observed {
            exit: r.exit,
            rc: r.rc,
            response: r.response,
            sent,
            emitted: r.emitted.into_iter().map(|e| (e.endpoint, e.bytes)).collect(),
        },
    }
}

#[test]
fn c01_differential_semantics() {
    const PROGRAMS: usize = 1000;
    const REQUESTS: usize = 12;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1FF);
    let model = NicModel::default();
    let mut exits: BTreeMap<&str, usize> = BTreeMap::new();
    let mut mismatches = Vec::new();
    for pi in 0..PROGRAMS {
        let (text, prog) = common::program(&mut rng);
        let mut stores: BTreeMap<String, FlatStore> = prog
            .lambdas
            .iter()
            .map(|l| (l.name.clone(), FlatStore::for_lambda(l)))
            .collect();
        let mut nics: Vec<Nic<Echo>> = [0u8, 1]
            .iter()
            .map(|&o| {
                let echo = Echo { latency: ECHO_LATENCY };
                Nic::booted_with(model.clone(), firmware(&prog, o), pi as u64, echo).unwrap()
            })
            .collect();
        let n = prog.lambdas.len() as u32;
        for k in 0..REQUESTS {
            // wid n+1 is unmatched
            let wid = if rng.gen_bool(0.1) { n + 1 } else { rng.gen_range(1..=n) };
            let src = common::SOURCES[rng.gen_range(0..common::SOURCES.len())];
            let payload = common::payload(&mut rng);
            let want = oracle(&prog, &mut stores, wid, src, &payload);
            *exits
                .entry(match want.exit {
                    Exit::Respond { .. } => "respond",
                    Exit::Drop => "drop",
                    Exit::ToHost => "to_host",
                    Exit::Trap(_) => "trap",
                })
                .or_default() += 1;
            for (o, nic) in nics.iter_mut().enumerate() {
                let got = observe(nic, k as u64 + 1, wid, src, &payload);
                if got != want && mismatches.len() < 3 {
                    mismatches.push(format!(
                        "program {pi} opt {o} req {k} wid {wid}:\nwant {want:?}\ngot  {got:?}\n{text}"
                    ));
                }
            }
        }
    }
    for m in &mismatches {
        eprintln!("{m}");
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "differential semantics",
        mismatches.is_empty() && secs < 300.0,
        &format!("{PROGRAMS} programs x {REQUESTS} requests, exits {exits:?}, {secs:.1}s"),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn c02_optimizer_trend() {
    let model = NicModel::default();
    let suite = benchmark_suite(&WorkloadParams::default(), &model).unwrap();
    let (_, r0) = compile(&suite, &model, &CompileOptions::opt(0)).unwrap();
    let (_, r1) = compile(&suite, &model, &CompileOptions::opt(1)).unwrap();
    println!("opt-0\n{}opt-1\n{}", r0.to_tsv(), r1.to_tsv());
    let totals: Vec<usize> = r1.passes.iter().map(|p| p.total).collect();
    let monotone = totals.windows(2).all(|w| w[1] <= w[0]);
    let (t0, t1) = (r0.final_total(), r1.final_total());
    let reduction = 1.0 - t1 as f64 / t0 as f64;
    verdict(
        2,
        "optimizer trend",
        t1 < t0 && monotone && reduction >= 0.05,
        &format!("opt0 {t0} -> opt1 {t1} ({:.2}% fewer), passes {totals:?}", reduction * 100.0),
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn c03_contention_invariance() {
    const N: usize = 10_000;
    let run = |b, m| run_benchmark(&BenchConfig::new(WorkloadKind::Webserver, b, m, N, 17)).unwrap();
    let nic_iso = run(BackendKind::Nic, Mode::Closed);
    let nic_rr = run(BackendKind::Nic, Mode::RrMulti);
    let (p_iso, p_rr) = (
        nic_iso.metrics.percentile_ns(99.0).unwrap() as f64,
        nic_rr.metrics.percentile_ns(99.0).unwrap() as f64,
    );
    let nic_ok = nic_iso.metrics.completed() == N && nic_rr.metrics.completed() == N && (p_rr / p_iso - 1.0).abs() <= 0.05;

    let host_iso = run(BackendKind::Host, Mode::Closed);
    let host_rr = run(BackendKind::Host, Mode::RrMulti);
    let penalty = BenchConfig::new(WorkloadKind::Webserver, BackendKind::Host, Mode::RrMulti, N, 17)
        .host
        .switch_penalty
        .as_nanos() as f64;
    // strict rotation on one thread: every request but the first switches lambda
    let expected = penalty * (N - 1) as f64 / N as f64;
    let diff = host_rr.metrics.mean_ns().unwrap() - host_iso.metrics.mean_ns().unwrap();
    let host_ok = (diff - expected).abs() <= 0.01 * expected;
    verdict(
        3,
        "contention invariance",
        nic_ok && host_ok,
        &format!(
            "nic p99 iso {p_iso} rr {p_rr} ns; host mean shift {diff:.1} ns vs expected {expected:.1} ns"
        ),
    );
}

// ---------------------------------------------------------------- 4

#[test]
fn c04_reordering_cost() {
    let src = ".lambda web\n.global content 64 hot\n.func m\n.entry\n memcpy [resp + 0], [content + 0], 64\n halt FORWARD\n.end\n.rule 1 web\n";
    let fw = firmware(&parse_program(src).unwrap(), 1);
    let payload = vec![3u8; 400];
    let mut nic = Nic::booted(NicModel::default(), fw, 5).unwrap();
    nic.ingest(SimTime::ZERO, 9, LambdaFrame::request(1, 1, payload.clone()));
    let mut frames = fragment(1, 2, FrameFlags::empty(), &payload, FRAME_HEADER_LEN + 100);
    let sizes: Vec<usize> = frames.iter().map(|f| f.payload.len()).collect();
    frames.reverse();
    for (i, f) in frames.into_iter().enumerate() {
        nic.ingest(SimTime::from_millis(1) + SimTime(i as u64), 9, f);
    }
    nic.run_to_idle();
    let t = nic.trace();
    let added = t[1].instructions as i64 - t[0].instructions as i64;
    // 30 instructions per reordered packet, 4 packets
    verdict(
        4,
        "reordering cost",
        sizes == [100; 4] && t[1].outcome.is_completed() && added == 120,
        &format!("fragments {sizes:?}, added {added} instructions"),
    );
}

// ---------------------------------------------------------------- 5

const EVIL: &str = "\
.lambda evil
.global buf 64 hot
.func main
.entry
    ldm r1, [payload + 0]
    ldm r2, [payload + 4]
    ldmb r3, [payload + 8]
    and r3, r3, 3
    jeq r3, 0, rd
    jeq r3, 1, wr
    jeq r3, 2, cp
    ldmb r4, [payload + 9]
    and r4, r4, 127
    add r4, r4, 1
    memcpy [resp + 0], [buf + r1], r4
    halt FORWARD
rd:
    ldm r5, [buf + r1]
    stm [resp + 0], r5
    halt FORWARD
wr:
    stm [buf + r1], r2
    halt FORWARD
cp:
    memcpy [buf + r1], [payload + 16], 16
    halt FORWARD
.end
.lambda victim
.global secret 64 hot
.init secret fill 0x5a
.func main
.entry
    memcpy [resp + 0], [secret + 0], 64
    halt FORWARD
.end
.rule 1 evil
.rule 2 victim
";

#[test]
fn c05_isolation_soundness() {
    const N: usize = 10_000;
    let fw = firmware(&parse_program(EVIL).unwrap(), 1);
    let mut nic = Nic::booted(NicModel::default(), fw, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut expect_trap = BTreeMap::new();
    for i in 0..N as u64 {
        let mut p = vec![0u8; 32];
        rng.fill(&mut p[..]);
        let idx: i32 = if rng.gen_bool(0.6) { rng.gen_range(-16..80) } else { rng.gen() };
        p[..4].copy_from_slice(&idx.to_be_bytes());
        let span = match p[8] & 3 {
            0 | 1 => 4,
            2 => 16,
            _ => (p[9] & 127) as i64 + 1,
        };
        let bad = idx < 0 || idx as i64 + span > 64;
        expect_trap.insert(2 * i + 1, bad);
        nic.ingest(SimTime(i * 2_000), 3, LambdaFrame::request(1, 2 * i + 1, p));
        nic.ingest(SimTime(i * 2_000 + 1_000), 3, LambdaFrame::request(2, 2 * i + 2, vec![]));
    }
    let out = nic.run_to_idle();
    let violations = expect_trap.values().filter(|b| **b).count();
    let mut wrong = 0usize;
    for t in nic.trace() {
        if let Some(&bad) = expect_trap.get(&t.request_id) {
            let trapped = t.outcome == Outcome::Trapped { rc: Trap::OutOfBounds.rc() };
            if trapped != bad || (!bad && !t.outcome.is_completed()) {
                wrong += 1;
            }
        }
    }
    let victim_intact = out.iter().all(|o| match o {
        NicOutput::Executed(c) if c.workload_id == 2 => c.result.response == vec![0x5a; 64],
        _ => true,
    });
    let tr = nic.tracker();
    verdict(
        5,
        "isolation soundness",
        tr.cross_owner == 0 && tr.unowned == 0 && wrong == 0 && victim_intact && nic.trace().len() == 2 * N,
        &format!(
            "{N} fuzzed requests, {violations} out of bounds, {} accesses, cross {} unowned {}, mismatched {wrong}",
            tr.accesses, tr.cross_owner, tr.unowned
        ),
    );
}

// ---------------------------------------------------------------- 6

#[test]
fn c06_wfq_fairness() {
    let body = "const r1, 0\nl:\n add r1, r1, 1\n jlt r1, 40, l\n halt DROP\n";
    // the dispatch chain reaches wid 2 one compare later; one extra
    // instruction in `a` makes the two workloads cost the same
    let src = format!(
        ".lambda a\n.func m\n.entry\n mov r2, r2\n{body}.end\n.lambda b\n.func m\n.entry\n{body}.end\n.rule 1 a\n.rule 2 b\n"
    );
    let fw = firmware(&parse_program(&src).unwrap(), 1);
    let mut nic = Nic::booted(NicModel::default(), fw, 2).unwrap();
    nic.set_weight(1, 2);
    nic.set_weight(2, 1);
    let mut rid = 0;
    for _ in 0..6_000 {
        for wid in [1, 1, 2] {
            rid += 1;
            nic.ingest(SimTime::ZERO, 4, LambdaFrame::request(wid, rid, vec![]));
        }
    }
    nic.run_to_idle();
    let mut t: Vec<&TraceRecord> = nic.trace().iter().collect();
    let costs: BTreeSet<u64> = t.iter().map(|r| r.cycles).collect();
    // stable: same-instant completions keep trace (service) order
    t.sort_by_key(|r| r.t_complete);
    let w: Vec<u32> = t.iter().map(|r| r.workload_id).collect();
    let (mut lo, mut hi) = (f64::MAX, 0f64);
    let mut windows = 0;
    for win in w.windows(1000) {
        let a = win.iter().filter(|&&x| x == 1).count() as f64;
        let b = win.len() as f64 - a;
        if a == 0.0 || b == 0.0 {
            continue;
        }
        windows += 1;
        lo = lo.min(a / b);
        hi = hi.max(a / b);
    }
    verdict(
        6,
        "wfq fairness",
        costs.len() == 1 && windows > 0 && w.len() == 18_000 && lo >= 1.9 && hi <= 2.1,
        &format!("{windows} sliding windows, ratio range [{lo:.3}, {hi:.3}], cycles per request {costs:?}"),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn c07_transport_reliability() {
    const N: u64 = 1000;
    let model = NicModel::default();
    let (d, _) = deployed(
        ".lambda echo\n.func m\n.entry\n ldh r1, match.len\n memcpy [resp + 0], [payload + 0], r1\n halt FORWARD\n.end\n",
        &model,
    );
    let nic = Nic::booted(model, d.firmware[&0].clone(), 1).unwrap();
    let link = LinkModel {
        drop: 0.2,
        dup: 0.2,
        jitter: SimTime::from_micros(3),
        ..LinkModel::default()
    };
    let cfg = GatewayConfig {
        max_retries: 12,
        ..GatewayConfig::default()
    };
    let mut c = Cluster::new(vec![nic], link, cfg, 77);
    c.set_mapping(d.mapping.clone(), &[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut sent = HashMap::new();
    for i in 0..N {
        let len = rng.gen_range(1..=1400);
        let mut p = vec![0u8; len];
        rng.fill(&mut p[..]);
        p[..1.min(len)].copy_from_slice(&[(i % 251) as u8][..1.min(len)]);
        let rid = c.submit(SimTime::from_micros(10 * i), "echo", &p).unwrap();
        sent.insert(rid, p);
    }
    let ev = c.run_to_idle();
    let mut seen = BTreeSet::new();
    let (mut ok, mut bad) = (0, 0);
    for e in &ev {
        match e {
            GatewayEvent::Completed { request_id, payload, .. } => {
                if seen.insert(*request_id) && sent.get(request_id) == Some(payload) {
                    ok += 1;
                } else {
                    bad += 1;
                }
            }
            GatewayEvent::Failed { .. } => bad += 1,
        }
    }
    let s = c.stats().clone();
    verdict(
        7,
        "transport reliability",
        ok == N && bad == 0 && seen.len() == sent.len(),
        &format!(
            "{ok}/{N} exact, {} frames lost, {} duplicated, {} retransmissions, {} duplicate responses",
            s.frames_lost, s.frames_duplicated, s.retransmissions, s.duplicate_responses
        ),
    );
}

// ---------------------------------------------------------------- 8

#[test]
fn c08_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = 0;
    let mut differ = Vec::new();
    for w in WorkloadKind::ALL {
        for b in [BackendKind::Nic, BackendKind::Host] {
            for m in [Mode::Closed, Mode::Par56, Mode::RrMulti] {
                let mut cfg = BenchConfig::new(w, b, m, 300, 4242);
                cfg.link.jitter = SimTime::from_micros(2);
                cfg.link.drop = 0.05;
                let label = format!("{w}-{b}-{m}");
                let files: Vec<Vec<Vec<u8>>> = (0..2)
                    .map(|k| {
                        let out = dir.path().join(format!("{label}-{k}"));
                        run_benchmark(&cfg).unwrap().write_outputs(&out, b.name()).unwrap();
                        ["trace.tsv", "ecdf.tsv", "summary.tsv", "passes.tsv"]
                            .iter()
                            .map(|f| std::fs::read(out.join(f)).unwrap())
                            .collect()
                    })
                    .collect();
                runs += 1;
                if files[0] != files[1] {
                    differ.push(label);
                }
            }
        }
    }
    verdict(
        8,
        "determinism",
        differ.is_empty(),
        &format!("{runs} configurations run twice, differing {differ:?}"),
    );
}

// ---------------------------------------------------------------- 9

fn gray_reference(rgba: &[u8]) -> Vec<u8> {
    rgba.chunks_exact(4)
        .map(|p| ((77 * p[0] as u32 + 150 * p[1] as u32 + 29 * p[2] as u32) >> 8) as u8)
        .collect()
}

#[test]
fn c09_workload_oracles() {
    let model = NicModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    // grayscale
    let prog = build_workload(WorkloadKind::Imagexform, &WorkloadParams::default(), &model).unwrap();
    let mut mgr = WorkloadManager::new(model.clone(), CompileOptions::default());
    let d = mgr.deploy(&prog, &[0]).unwrap();
    let nic = Nic::booted(model.clone(), d.firmware[&0].clone(), 1).unwrap();
    let mut c = Cluster::new(vec![nic], LinkModel::default(), GatewayConfig::default(), 1);
    c.set_mapping(d.mapping.clone(), &[0]);
    let mut images = HashMap::new();
    for i in 0..100u64 {
        let (w, h) = (rng.gen_range(1..=64), rng.gen_range(1..=64));
        let mut img = vec![0u8; w * h * 4];
        rng.fill(&mut img[..]);
        let rid = c.submit(SimTime::from_micros(500 * i), "img", &img).unwrap();
        images.insert(rid, img);
    }
    let exact = c
        .run_to_idle()
        .iter()
        .filter(|e| match e {
            GatewayEvent::Completed { request_id, payload, .. } => *payload == gray_reference(&images[request_id]),
            _ => false,
        })
        .count();
    let two_px = gray_reference(&[255, 255, 255, 255, 0, 0, 0, 0]) == [255, 0];

    // GET after SET
    let kvp = build_workload(WorkloadKind::Kvclient, &WorkloadParams::default(), &model).unwrap();
    let d = WorkloadManager::new(model.clone(), CompileOptions::default()).deploy(&kvp, &[0]).unwrap();
    let kv = SharedKv::new(KvStore::new(SimTime::from_micros(20)));
    let nic = Nic::booted_with(model.clone(), d.firmware[&0].clone(), 2, kv).unwrap();
    let mut c = Cluster::new(vec![nic], LinkModel::default(), GatewayConfig::default(), 2);
    c.set_mapping(d.mapping.clone(), &[0]);
    let mut truth: HashMap<Vec<u8>, Vec<u8>> = HashMap::new();
    let (mut gets, mut kv_bad) = (0, 0);
    for i in 0..2000u64 {
        let key = format!("key-{:02}", rng.gen_range(0..16)).into_bytes();
        let set = rng.gen_bool(0.5);
        let msg = if set {
            let v: Vec<u8> = (0..rng.gen_range(0..48)).map(|_| rng.gen()).collect();
            KvMessage::set(&key, &v)
        } else {
            KvMessage::get(&key)
        };
        c.submit(SimTime::from_millis(i), "kv", &msg.encode()).unwrap();
        let ev = c.run_to_idle();
        let Some(GatewayEvent::Completed { payload, .. }) = ev.first() else {
            kv_bad += 1;
            continue;
        };
        let reply = KvMessage::decode(payload);
        if set {
            truth.insert(key, msg.value.clone());
            kv_bad += usize::from(reply.as_ref() != Ok(&msg));
        } else {
            gets += 1;
            let want = truth.get(&key).cloned().unwrap_or_default();
            kv_bad += usize::from(reply.map(|r| r.value) != Ok(want));
        }
    }

    // golden bytes, written out from the field table
    let f = LambdaFrame {
        flags: FrameFlags::RESPONSE.union(FrameFlags::EVENT_TRIGGER),
        workload_id: 0x0102_0304,
        request_id: 0x1122_3344_5566_7788,
        seq: 1,
        total: 3,
        payload: b"hi".to_vec(),
    };
    let golden: [u8; 24] = [
        0xD4, 0x1C, 0x01, 0x05, 0x01, 0x02, 0x03, 0x04, 0x11, 0x22, 0x33, 0x44, 0x55, 0x66, 0x77, 0x88, 0x00, 0x01,
        0x00, 0x03, 0x00, 0x02, b'h', b'i',
    ];
    let frame_ok = encode_frame(&f, 1500).unwrap() == golden;
    let kv_golden = KvMessage::set(b"ab", b"xyz").encode() == [1, 0, 2, 0, 3, b'a', b'b', b'x', b'y', b'z'];

    verdict(
        9,
        "workload oracles",
        exact == 100 && two_px && kv_bad == 0 && gets > 0 && frame_ok && kv_golden,
        &format!("gray {exact}/100 exact, kv {gets} gets {kv_bad} wrong, frame golden {frame_ok}, kv golden {kv_golden}"),
    );
}

// ---------------------------------------------------------------- 10

#[test]
fn c10_deployment_lifecycle() {
    let model = NicModel {
        downtime_ns: 1_500_000,
        ..NicModel::default()
    };
    let echo = ".lambda echo\n.func m\n.entry\n memcpy [resp + 0], [payload + 0], 8\n halt FORWARD\n.end\n";
    let (d, mut mgr) = deployed(echo, &model);
    let nic = Nic::booted(model.clone(), d.firmware[&0].clone(), 1).unwrap();
    let link = LinkModel::default();
    let mut c = Cluster::new(vec![nic], link.clone(), GatewayConfig::default(), 3);
    c.set_mapping(d.mapping.clone(), &[0]);
    let mut submitted = BTreeMap::new();
    for i in 0..250u64 {
        let at = SimTime::from_micros(20 * i);
        let rid = c.submit(at, "echo", &i.to_be_bytes()).unwrap();
        submitted.insert(rid, at);
    }
    let d2 = mgr
        .deploy(&parse_program(".lambda other\n.func m\n.entry\n halt FORWARD\n.end\n").unwrap(), &[0])
        .unwrap();
    let start = SimTime::from_millis(1);
    let ready = c.deploy(&d2, start).unwrap();
    let ev = c.run_to_idle();
    let trace = c.take_traces().remove(0);
    let in_window = |t: SimTime| t >= start && t < ready;
    let drops_in_window = trace
        .iter()
        .filter(|t| t.outcome == Outcome::DroppedDowntime)
        .all(|t| in_window(t.t_arrive));
    let mut wrong = 0;
    let mut retried = 0;
    for e in &ev {
        match e {
            GatewayEvent::Completed { request_id, retries, .. } => {
                let arrive = submitted[request_id] + link.latency;
                let expect = u32::from(in_window(arrive));
                retried += usize::from(*retries > 0);
                wrong += usize::from(*retries != expect);
            }
            GatewayEvent::Failed { .. } => wrong += 1,
        }
    }
    let dropped = trace.iter().filter(|t| t.outcome == Outcome::DroppedDowntime).count();
    let lifecycle = ev.len() == submitted.len() && wrong == 0 && drops_in_window && dropped == retried && dropped > 0;

    // journal replay after a crash mid-append
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("registry.journal");
    let two = ".lambda a\n.func m\n.entry\n halt FORWARD\n.end\n.lambda b\n.func m\n.entry\n halt DROP\n.end\n";
    let before = {
        let mut m = WorkloadManager::with_journal(model.clone(), CompileOptions::default(), &path).unwrap();
        m.deploy(&parse_program(two).unwrap(), &[0, 1]).unwrap();
        m.deploy(&parse_program(".lambda c\n.func m\n.entry\n halt FORWARD\n.end\n").unwrap(), &[1])
            .unwrap();
        m.retire("a").unwrap();
        m.registry().clone()
    };
    let mut bytes = std::fs::read(&path).unwrap();
    let clean_len = bytes.len();
    bytes.extend_from_slice(&[0, 0, 0, 40, 1, 0, 3, b'z']);
    std::fs::write(&path, &bytes).unwrap();
    let (records, valid) = parse_journal(&bytes);
    let replayed = replay(&records);
    let (_, reopened) = Journal::open(&path).unwrap();
    let journal_ok = replayed == before && reopened == before && valid == clean_len;

    verdict(
        10,
        "deployment lifecycle",
        lifecycle && journal_ok,
        &format!(
            "window [{start}, {ready}), {dropped} dropped then retried, {wrong} off-window, journal replay {journal_ok}"
        ),
    );
}
