//! Bare-metal host baseline: lambdas run as interpreted threads on a
//! general-purpose server.
//!
//! Cost per request is `overhead + instructions / clock + switch + io_wait`,
//! where `switch` is charged when the thread last ran a different lambda.
//! The overhead jitters as `overhead * ((1 - j) + j * X)` with `X ~ Exp(1)`;
//! `X` depends only on (seed, request id), so two runs that issue the same
//! ids see the same draws.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::emulator::{Completion, ExecResult, Exit, NicOutput, Outcome, TraceRecord};
use crate::ir::{rc, FlatStore, Interpreter, NoServices, ServiceReply, Services};
use crate::model::{
    fragment, Endpoint, FrameFlags, LambdaFrame, MatchData, Push, Reassembler, RequestId, WorkloadId,
    DEFAULT_MTU,
};
use crate::time::SimTime;
use crate::MLProgram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostConfig {
    pub threads: u32,
    pub clock_hz: u64,
    pub overhead: SimTime,
    pub switch_penalty: SimTime,
    /// Share of the overhead that is exponentially distributed, in [0, 1].
    pub jitter: f64,
    pub mtu: usize,
}

impl Default for HostConfig {
    fn default() -> Self {
        HostConfig {
            threads: 56,
            clock_hz: 2_000_000_000,
            overhead: SimTime::from_micros(10),
            switch_penalty: SimTime::from_micros(5),
            jitter: 0.5,
            mtu: DEFAULT_MTU,
        }
    }
}

impl HostConfig {
    /// No jitter: every request pays exactly `overhead`.
    pub fn fixed(threads: u32) -> Self {
        HostConfig {
            threads,
            jitter: 0.0,
            ..Self::default()
        }
    }

    /// The jittered overhead of request `rid`.
    pub fn overhead_for(&self, seed: u64, rid: RequestId) -> SimTime {
        if self.jitter <= 0.0 {
            return self.overhead;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ rid.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let u: f64 = rng.gen();
        let x = -(1.0 - u).ln();
        let ns = self.overhead.as_nanos() as f64 * ((1.0 - self.jitter) + self.jitter * x);
        SimTime::from_nanos(ns.round() as u64)
    }

    pub fn compute_time(&self, instructions: u64) -> SimTime {
        let ns = (instructions as u128 * 1_000_000_000).div_ceil(self.clock_hz as u128);
        SimTime::from_nanos(ns as u64)
    }
}

struct TimedServices<'a> {
    inner: &'a mut dyn Services,
    wait: SimTime,
}

impl Services for TimedServices<'_> {
    fn call(&mut self, endpoint: Endpoint, request: &[u8]) -> ServiceReply {
        let r = self.inner.call(endpoint, request);
        self.wait += r.latency;
        r
    }
}

#[derive(Debug, Clone)]
struct Pending {
    src: Endpoint,
    wid: WorkloadId,
    rid: RequestId,
    t_arrive: SimTime,
    payload: Vec<u8>,
    frames: u16,
}

struct Running {
    p: Pending,
    t_dispatch: SimTime,
    result: ExecResult,
}

enum Event {
    Arrival { src: Endpoint, frame: LambdaFrame },
    Complete { thread: u32 },
    Load { prog: Arc<MLProgram> },
}

struct Queued {
    at: SimTime,
    seq: u64,
    ev: Event,
}

impl PartialEq for Queued {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Queued {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(o.at, o.seq))
    }
}

pub struct HostBackend<S = NoServices> {
    cfg: HostConfig,
    seed: u64,
    prog: Option<Arc<MLProgram>>,
    stores: BTreeMap<String, FlatStore>,
    threads: Vec<Option<Running>>,
    last_lambda: Vec<Option<String>>,
    queue: VecDeque<Pending>,
    asm: BTreeMap<(Endpoint, WorkloadId, RequestId), (Reassembler, SimTime)>,
    events: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    now: SimTime,
    services: S,
    trace: Vec<TraceRecord>,
}

impl HostBackend<NoServices> {
    pub fn new(cfg: HostConfig, seed: u64) -> Self {
        Self::with_services(cfg, seed, NoServices)
    }
}

impl<S: Services> HostBackend<S> {
    pub fn with_services(cfg: HostConfig, seed: u64, services: S) -> Self {
        let n = cfg.threads.max(1) as usize;
        HostBackend {
            cfg,
            seed,
            prog: None,
            stores: BTreeMap::new(),
            threads: (0..n).map(|_| None).collect(),
            last_lambda: vec![None; n],
            queue: VecDeque::new(),
            asm: BTreeMap::new(),
            events: BinaryHeap::new(),
            seq: 0,
            now: SimTime::ZERO,
            services,
            trace: Vec::new(),
        }
    }

    /// Host with `prog` already installed.
    pub fn loaded(cfg: HostConfig, prog: MLProgram, seed: u64, services: S) -> Self {
        let mut h = Self::with_services(cfg, seed, services);
        h.install(Arc::new(prog));
        h
    }

    pub fn config(&self) -> &HostConfig {
        &self.cfg
    }

    pub fn services(&self) -> &S {
        &self.services
    }

    pub fn services_mut(&mut self) -> &mut S {
        &mut self.services
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        std::mem::take(&mut self.trace)
    }

    pub fn backlog(&self) -> usize {
        self.queue.len()
    }

    fn install(&mut self, prog: Arc<MLProgram>) {
        self.stores = prog
            .lambdas
            .iter()
            .map(|l| (l.name.clone(), FlatStore::for_lambda(l)))
            .collect();
        self.prog = Some(prog);
    }

    /// Replaces the program set at `at`. The host has no downtime.
    pub fn load_program(&mut self, prog: MLProgram, at: SimTime) -> SimTime {
        let at = at.max(self.now);
        self.push(at, Event::Load { prog: Arc::new(prog) });
        at
    }

    fn push(&mut self, at: SimTime, ev: Event) {
        self.seq += 1;
        self.events.push(Reverse(Queued { at, seq: self.seq, ev }));
    }

    pub fn ingest(&mut self, at: SimTime, src: Endpoint, frame: LambdaFrame) {
        let at = at.max(self.now);
        self.push(at, Event::Arrival { src, frame });
    }

    pub fn next_event_time(&self) -> Option<SimTime> {
        self.events.peek().map(|Reverse(q)| q.at)
    }

    pub fn is_idle(&self) -> bool {
        self.events.is_empty()
    }

    pub fn step(&mut self) -> Vec<NicOutput> {
        let Some(Reverse(q)) = self.events.pop() else {
            return Vec::new();
        };
        self.now = q.at;
        let mut out = Vec::new();
        match q.ev {
            Event::Arrival { src, frame } => self.on_arrival(src, frame),
            Event::Complete { thread } => self.on_complete(thread, &mut out),
            Event::Load { prog } => self.install(prog),
        }
        out
    }

    pub fn run_to_idle(&mut self) -> Vec<NicOutput> {
        let mut out = Vec::new();
        while !self.is_idle() {
            out.extend(self.step());
        }
        out
    }

    fn on_arrival(&mut self, src: Endpoint, frame: LambdaFrame) {
        let (wid, rid) = (frame.workload_id, frame.request_id);
        let p = if frame.total <= 1 {
            Pending {
                src,
                wid,
                rid,
                t_arrive: self.now,
                payload: frame.payload,
                frames: 1,
            }
        } else {
            let key = (src, wid, rid);
            match self.asm.get_mut(&key) {
                Some((r, _)) => {
                    if !matches!(r.push(frame), Ok(Push::Accepted)) {
                        self.trace.push(TraceRecord {
                            request_id: rid,
                            workload_id: wid,
                            t_arrive: self.now,
                            t_dispatch: self.now,
                            t_complete: self.now,
                            cycles: 0,
                            instructions: 0,
                            outcome: Outcome::Duplicate,
                            frames: 1,
                            core: None,
                        });
                        return;
                    }
                }
                None => {
                    self.asm.insert(key, (Reassembler::new(frame), self.now));
                }
            }
            if !self.asm[&key].0.is_complete() {
                return;
            }
            let (r, first) = self.asm.remove(&key).expect("present");
            let frames = r.total();
            Pending {
                src,
                wid,
                rid,
                t_arrive: first,
                payload: r.finish().expect("complete").payload,
                frames,
            }
        };
        match self.threads.iter().position(|t| t.is_none()) {
            Some(t) => self.start(t as u32, p),
            None => self.queue.push_back(p),
        }
    }

    fn start(&mut self, thread: u32, p: Pending) {
        let prog = self.prog.clone();
        let lambda = prog
            .as_deref()
            .and_then(|pr| pr.stage.dispatch(p.wid).and_then(|n| pr.lambda(n).map(|l| (pr, l))));
        let overhead = self.cfg.overhead_for(self.seed, p.rid);
        let (result, cost) = match lambda {
            None => (
                ExecResult {
                    exit: Exit::ToHost,
                    rc: None,
                    lambda: None,
                    response: Vec::new(),
                    emitted: Vec::new(),
                    cycles: 0,
                    instructions: 0,
                    lambda_instructions: 0,
                    io_wait: SimTime::ZERO,
                },
                overhead,
            ),
            Some((pr, l)) => {
                let md = MatchData {
                    source: p.src,
                    arrival: p.t_arrive,
                    payload_len: p.payload.len() as u32,
                };
                let mut timed = TimedServices {
                    inner: &mut self.services,
                    wait: SimTime::ZERO,
                };
                let store = self.stores.get_mut(&l.name).expect("store per lambda");
                let ex = Interpreter::new(pr, l).run(&p.payload, &md, store, &mut timed);
                let io_wait = timed.wait;
                let exit = match ex.result {
                    Err(t) => Exit::Trap(t),
                    Ok(rc::DROP) => Exit::Drop,
                    Ok(rc::TO_HOST) => Exit::ToHost,
                    Ok(_) => Exit::Respond {
                        egress: pr
                            .stage
                            .routes
                            .get(&l.name)
                            .and_then(|rs| rs.iter().find(|r| r.key == p.src))
                            .map_or(p.src, |r| r.egress),
                    },
                };
                let switched = self.last_lambda[thread as usize]
                    .as_deref()
                    .is_some_and(|prev| prev != l.name);
                self.last_lambda[thread as usize] = Some(l.name.clone());
                let mut cost = overhead + self.cfg.compute_time(ex.instructions) + io_wait;
                if switched {
                    cost += self.cfg.switch_penalty;
                }
                (
                    ExecResult {
                        exit,
                        rc: Some(ex.rc()),
                        lambda: pr.lambdas.iter().position(|x| x.name == l.name).map(|i| i as u16),
                        response: ex.response,
                        emitted: ex.emitted,
                        cycles: ex.instructions,
                        instructions: ex.instructions,
                        lambda_instructions: ex.instructions,
                        io_wait,
                    },
                    cost,
                )
            }
        };
        let done = self.now + cost;
        self.threads[thread as usize] = Some(Running {
            p,
            t_dispatch: self.now,
            result,
        });
        self.push(done, Event::Complete { thread });
    }

    fn on_complete(&mut self, thread: u32, out: &mut Vec<NicOutput>) {
        let r = self.threads[thread as usize].take().expect("running thread");
        let p = r.p;
        let outcome = match r.result.exit {
            Exit::Respond { .. } => Outcome::Completed {
                rc: r.result.rc.unwrap_or(rc::FORWARD),
            },
            Exit::Drop => Outcome::Completed { rc: rc::DROP },
            Exit::ToHost => Outcome::ToHost,
            Exit::Trap(t) => Outcome::Trapped { rc: t.rc() },
        };
        self.trace.push(TraceRecord {
            request_id: p.rid,
            workload_id: p.wid,
            t_arrive: p.t_arrive,
            t_dispatch: r.t_dispatch,
            t_complete: self.now,
            cycles: r.result.cycles,
            instructions: r.result.instructions,
            outcome,
            frames: p.frames,
            core: Some(thread),
        });
        match r.result.exit {
            Exit::Respond { egress } => out.push(NicOutput::Response {
                at: self.now,
                dst: egress,
                request_id: p.rid,
                workload_id: p.wid,
                frames: fragment(p.wid, p.rid, FrameFlags::RESPONSE, &r.result.response, self.cfg.mtu),
            }),
            Exit::ToHost => out.push(NicOutput::ToHost {
                at: self.now,
                src: p.src,
                request_id: p.rid,
                workload_id: p.wid,
                payload: p.payload.clone(),
            }),
            Exit::Drop | Exit::Trap(_) => {}
        }
        out.push(NicOutput::Executed(Box::new(Completion {
            at: self.now,
            src: p.src,
            request_id: p.rid,
            workload_id: p.wid,
            rdma: None,
            result: r.result,
        })));
        if let Some(next) = self.queue.pop_front() {
            self.start(thread, next);
        }
    }
}
