//! The event-driven NIC: ingress, reassembly, scheduling, execution.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::exec::{ExecResult, Executor, Exit, Request};
use super::memory::{PhysMem, RegionTracker};
use super::nic_model::{NicModel, Tier};
use super::trace::{Outcome, TraceRecord};
use super::wfq::Wfq;
use crate::compiler::Firmware;
use crate::ir::{rc, NoServices, Services};
use crate::model::{
    fragment, Endpoint, FrameFlags, LambdaFrame, MatchData, Push, Reassembler, RequestId,
    WorkloadId, FRAME_HEADER_LEN,
};
use crate::time::SimTime;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LoadError {
    #[error("firmware has {total} instructions, instruction store holds {capacity}")]
    InstructionStore { total: usize, capacity: usize },
    #[error("memory image at {tier} {base:#x}+{len} exceeds the tier")]
    Image { tier: Tier, base: u64, len: u64 },
}

/// What the NIC sends out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NicOutput {
    Response {
        at: SimTime,
        dst: Endpoint,
        request_id: RequestId,
        workload_id: WorkloadId,
        frames: Vec<LambdaFrame>,
    },
    ToHost {
        at: SimTime,
        src: Endpoint,
        request_id: RequestId,
        workload_id: WorkloadId,
        payload: Vec<u8>,
    },
    /// Every finished execution, responded or not.
    Executed(Box<Completion>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub at: SimTime,
    pub src: Endpoint,
    pub request_id: RequestId,
    pub workload_id: WorkloadId,
    /// Where an RDMA payload was committed: (EMEM address, length).
    pub rdma: Option<(u64, u32)>,
    pub result: ExecResult,
}

#[derive(Debug, Clone)]
struct Pending {
    src: Endpoint,
    wid: WorkloadId,
    rid: RequestId,
    t_arrive: SimTime,
    payload: Vec<u8>,
    rdma: Option<(u64, u32)>,
    frames: u16,
    reorder: u64,
}

struct Running {
    p: Pending,
    t_dispatch: SimTime,
    result: ExecResult,
    cycles: u64,
    instructions: u64,
}

struct Assembly {
    r: Reassembler,
    first: SimTime,
    rdma_base: Option<u64>,
    epoch: u64,
}

type AsmKey = (Endpoint, WorkloadId, RequestId);

enum Event {
    Arrival { src: Endpoint, frame: LambdaFrame },
    Complete { thread: u32 },
    Timeout { key: AsmKey, epoch: u64 },
    Load { fw: Arc<Firmware> },
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

pub struct Nic<S = NoServices> {
    model: NicModel,
    fw: Option<Arc<Firmware>>,
    mem: PhysMem,
    tracker: RegionTracker,
    ready_at: SimTime,
    threads: Vec<Option<Running>>,
    free: Vec<u32>,
    wfq: Wfq<Pending>,
    asm: BTreeMap<AsmKey, Assembly>,
    events: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    epoch: u64,
    now: SimTime,
    rng: ChaCha8Rng,
    services: S,
    trace: Vec<TraceRecord>,
    rdma_cursor: u64,
    ingested: u64,
}

impl Nic<NoServices> {
    pub fn new(model: NicModel, seed: u64) -> Self {
        Nic::with_services(model, seed, NoServices)
    }

    /// A NIC already running `fw` at time zero.
    pub fn booted(model: NicModel, fw: Firmware, seed: u64) -> Result<Self, LoadError> {
        Nic::booted_with(model, fw, seed, NoServices)
    }
}

impl<S: Services> Nic<S> {
    pub fn with_services(model: NicModel, seed: u64, services: S) -> Self {
        let threads = model.threads();
        Nic {
            mem: PhysMem::new(&model),
            model,
            fw: None,
            tracker: RegionTracker::default(),
            ready_at: SimTime::ZERO,
            threads: (0..threads).map(|_| None).collect(),
            free: (0..threads).collect(),
            wfq: Wfq::new(),
            asm: BTreeMap::new(),
            events: BinaryHeap::new(),
            seq: 0,
            epoch: 0,
            now: SimTime::ZERO,
            rng: ChaCha8Rng::seed_from_u64(seed),
            services,
            trace: Vec::new(),
            rdma_cursor: 0,
            ingested: 0,
        }
    }

    pub fn booted_with(model: NicModel, fw: Firmware, seed: u64, services: S) -> Result<Self, LoadError> {
        let mut nic = Nic::with_services(model, seed, services);
        nic.check_firmware(&fw)?;
        nic.install(Arc::new(fw));
        Ok(nic)
    }

    pub fn model(&self) -> &NicModel {
        &self.model
    }

    pub fn firmware(&self) -> Option<&Firmware> {
        self.fw.as_deref()
    }

    pub fn services(&self) -> &S {
        &self.services
    }

    pub fn services_mut(&mut self) -> &mut S {
        &mut self.services
    }

    pub fn tracker(&self) -> &RegionTracker {
        &self.tracker
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// When the NIC accepts frames again after the last load.
    pub fn ready_at(&self) -> SimTime {
        self.ready_at
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        std::mem::take(&mut self.trace)
    }

    /// Frames handed to [`Nic::ingest`] so far.
    pub fn frames_ingested(&self) -> u64 {
        self.ingested
    }

    pub fn set_weight(&mut self, wid: WorkloadId, weight: u32) {
        self.wfq.set_weight(wid, weight);
    }

    pub fn read_mem(&self, tier: Tier, addr: u64, len: usize) -> Vec<u8> {
        self.mem.read(tier, addr, len)
    }

    /// Requests waiting for a thread.
    pub fn backlog(&self) -> usize {
        self.wfq.len()
    }

    pub fn busy_threads(&self) -> usize {
        self.threads.len() - self.free.len()
    }

    fn check_firmware(&self, fw: &Firmware) -> Result<(), LoadError> {
        if fw.total_instructions() > self.model.instruction_store {
            return Err(LoadError::InstructionStore {
                total: fw.total_instructions(),
                capacity: self.model.instruction_store,
            });
        }
        let fits = |tier: Tier, base: u64, len: u64| base + len <= self.model.capacity(tier);
        for img in &fw.images {
            if !fits(img.tier, img.base, img.bytes.len() as u64) {
                return Err(LoadError::Image {
                    tier: img.tier,
                    base: img.base,
                    len: img.bytes.len() as u64,
                });
            }
        }
        for p in &fw.placement.entries {
            if !fits(p.tier, p.base, p.size as u64) {
                return Err(LoadError::Image {
                    tier: p.tier,
                    base: p.base,
                    len: p.size as u64,
                });
            }
        }
        Ok(())
    }

    fn install(&mut self, fw: Arc<Firmware>) {
        self.mem.clear();
        for img in &fw.images {
            self.mem.write(img.tier, img.base, &img.bytes);
        }
        self.tracker = RegionTracker::for_firmware(&fw, &self.model);
        self.rdma_cursor = 0;
        self.fw = Some(fw);
    }

    /// Schedules a firmware swap at `at`. Every load, even of identical
    /// firmware, makes the NIC drop frames until the returned ready time.
    pub fn load_firmware(&mut self, fw: Firmware, at: SimTime) -> Result<SimTime, LoadError> {
        self.check_firmware(&fw)?;
        let at = at.max(self.now);
        self.push(at, Event::Load { fw: Arc::new(fw) });
        Ok(at + self.model.downtime())
    }

    fn push(&mut self, at: SimTime, ev: Event) {
        self.seq += 1;
        self.events.push(Reverse(Queued {
            at,
            seq: self.seq,
            ev,
        }));
    }

    /// Queues `frame` from `src` to arrive at `at` (not before the current time).
    pub fn ingest(&mut self, at: SimTime, src: Endpoint, frame: LambdaFrame) {
        self.ingested += 1;
        let at = at.max(self.now);
        self.push(at, Event::Arrival { src, frame });
    }

    pub fn next_event_time(&self) -> Option<SimTime> {
        self.events.peek().map(|Reverse(q)| q.at)
    }

    pub fn is_idle(&self) -> bool {
        self.events.is_empty()
    }

    /// Processes one event; returns what left the NIC.
    pub fn step(&mut self) -> Vec<NicOutput> {
        let Some(Reverse(q)) = self.events.pop() else {
            return Vec::new();
        };
        self.now = q.at;
        let mut out = Vec::new();
        match q.ev {
            Event::Arrival { src, frame } => self.on_arrival(src, frame),
            Event::Complete { thread } => self.on_complete(thread, &mut out),
            Event::Timeout { key, epoch } => self.on_timeout(key, epoch),
            Event::Load { fw } => self.on_load(fw),
        }
        out
    }

    /// Processes events up to and including time `t`.
    pub fn run_until(&mut self, t: SimTime) -> Vec<NicOutput> {
        let mut out = Vec::new();
        while self.next_event_time().is_some_and(|n| n <= t) {
            out.extend(self.step());
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

    fn drop_record(&mut self, wid: WorkloadId, rid: RequestId, t_arrive: SimTime, frames: u16, outcome: Outcome) {
        self.trace.push(TraceRecord {
            request_id: rid,
            workload_id: wid,
            t_arrive,
            t_dispatch: self.now,
            t_complete: self.now,
            cycles: 0,
            instructions: 0,
            outcome,
            frames,
            core: None,
        });
    }

    fn on_load(&mut self, fw: Arc<Firmware>) {
        for (_, p) in self.wfq.drain() {
            self.drop_record(p.wid, p.rid, p.t_arrive, p.frames, Outcome::DroppedDowntime);
        }
        for ((_, wid, rid), a) in std::mem::take(&mut self.asm) {
            self.drop_record(wid, rid, a.first, a.r.held(), Outcome::DroppedDowntime);
        }
        self.install(fw);
        self.ready_at = self.now + self.model.downtime();
    }

    fn chunk(&self) -> u64 {
        (self.model.mtu - FRAME_HEADER_LEN) as u64
    }

    fn on_arrival(&mut self, src: Endpoint, frame: LambdaFrame) {
        let (wid, rid) = (frame.workload_id, frame.request_id);
        if self.fw.is_none() || self.now < self.ready_at {
            self.drop_record(wid, rid, self.now, 1, Outcome::DroppedDowntime);
            return;
        }
        if frame.total <= 1 {
            let p = Pending {
                src,
                wid,
                rid,
                t_arrive: self.now,
                payload: frame.payload,
                rdma: None,
                frames: 1,
                reorder: 0,
            };
            self.dispatch(p);
            return;
        }
        let key = (src, wid, rid);
        let rdma = frame.flags.is_rdma_write();
        if let Some(a) = self.asm.get_mut(&key) {
            let (seq, payload) = (frame.seq, frame.payload.clone());
            let pushed = a.r.push(frame);
            let base = a.rdma_base;
            match pushed {
                Ok(Push::Accepted) => {
                    if let Some(base) = base {
                        let addr = base + seq as u64 * (self.model.mtu - FRAME_HEADER_LEN) as u64;
                        self.mem.write(Tier::Emem, addr, &payload);
                    }
                }
                Ok(Push::Duplicate) | Err(_) => {
                    self.drop_record(wid, rid, self.now, 1, Outcome::Duplicate);
                    return;
                }
            }
        } else {
            let rdma_base = if rdma {
                let size = (frame.total as u64 * self.chunk()).next_multiple_of(8);
                let area = self.model.rdma_area_bytes;
                if size > area {
                    self.drop_record(wid, rid, self.now, 1, Outcome::DroppedTimeout);
                    return;
                }
                if self.rdma_cursor + size > area {
                    self.rdma_cursor = 0;
                }
                let base = self.model.rdma_base() + self.rdma_cursor;
                self.rdma_cursor += size;
                self.mem
                    .write(Tier::Emem, base + frame.seq as u64 * self.chunk(), &frame.payload);
                Some(base)
            } else {
                None
            };
            self.epoch += 1;
            let epoch = self.epoch;
            self.asm.insert(
                key,
                Assembly {
                    r: Reassembler::new(frame),
                    first: self.now,
                    rdma_base,
                    epoch,
                },
            );
            let timeout = self.now + SimTime::from_nanos(self.model.reassembly_timeout_ns);
            self.push(timeout, Event::Timeout { key, epoch });
        }
        if self.asm[&key].r.is_complete() {
            let a = self.asm.remove(&key).expect("present");
            let total = a.r.total();
            let msg = a.r.finish().expect("complete");
            let len = msg.payload.len() as u32;
            let p = Pending {
                src,
                wid,
                rid,
                t_arrive: a.first,
                payload: msg.payload,
                rdma: a.rdma_base.map(|b| (b, len)),
                frames: total,
                reorder: if a.rdma_base.is_some() {
                    0
                } else {
                    total as u64 * self.model.reorder_instructions_per_frame
                },
            };
            self.dispatch(p);
        }
    }

    fn on_timeout(&mut self, key: AsmKey, epoch: u64) {
        if self.asm.get(&key).is_some_and(|a| a.epoch == epoch) {
            let a = self.asm.remove(&key).expect("present");
            self.drop_record(key.1, key.2, a.first, a.r.held(), Outcome::DroppedTimeout);
        }
    }

    fn dispatch(&mut self, p: Pending) {
        if self.free.is_empty() {
            self.wfq.push(p.wid, p);
            return;
        }
        let i = self.rng.gen_range(0..self.free.len());
        let thread = self.free.swap_remove(i);
        self.start(thread, p);
    }

    fn start(&mut self, thread: u32, p: Pending) {
        let fw = self.fw.clone().expect("dispatch only with firmware");
        let md = MatchData {
            source: p.src,
            arrival: p.t_arrive,
            payload_len: p.payload.len() as u32,
        };
        let result = Executor {
            fw: &fw,
            model: &self.model,
            mem: &mut self.mem,
            tracker: &mut self.tracker,
            services: &mut self.services,
        }
        .run(&Request {
            workload_id: p.wid,
            payload: &p.payload,
            rdma: p.rdma.is_some(),
            md,
        });
        let cycles = result.cycles + p.reorder;
        let instructions = result.instructions + p.reorder;
        let done = self.now + self.model.cycles_to_time(cycles) + result.io_wait;
        self.threads[thread as usize] = Some(Running {
            p,
            t_dispatch: self.now,
            result,
            cycles,
            instructions,
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
            cycles: r.cycles,
            instructions: r.instructions,
            outcome,
            frames: p.frames,
            core: Some(thread / self.model.threads_per_core),
        });
        match r.result.exit {
            Exit::Respond { egress } => out.push(NicOutput::Response {
                at: self.now,
                dst: egress,
                request_id: p.rid,
                workload_id: p.wid,
                frames: fragment(p.wid, p.rid, FrameFlags::RESPONSE, &r.result.response, self.model.mtu),
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
            rdma: p.rdma,
            result: r.result,
        })));
        self.free.push(thread);
        if let Some((_, next)) = self.wfq.pop() {
            let i = self.rng.gen_range(0..self.free.len());
            let t = self.free.swap_remove(i);
            self.start(t, next);
        }
    }
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub outputs: Vec<NicOutput>,
}

/// Feeds a timed frame schedule to a freshly booted NIC and runs it to quiescence.
pub fn run(
    model: &NicModel,
    fw: &Firmware,
    schedule: &[(SimTime, Endpoint, LambdaFrame)],
    seed: u64,
) -> Result<RunOutput, LoadError> {
    let mut nic = Nic::booted(model.clone(), fw.clone(), seed)?;
    for (t, src, f) in schedule {
        nic.ingest(*t, *src, f.clone());
    }
    let outputs = nic.run_to_idle();
    Ok(RunOutput {
        trace: nic.take_trace(),
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{compile, CompileOptions};
    use crate::ir::{parse_program, Echo};
    use crate::model::fragment;

    const WEB: &str = ".lambda web\n.global content 1024 hot\n.init content fill 0x41\n.func main\n.entry\n memcpy [resp + 0], [content + 0], 1024\n halt FORWARD\n.end\n.rule 1 web\n";

    fn firmware(src: &str, opt: u8) -> Firmware {
        compile(&parse_program(src).unwrap(), &NicModel::default(), &CompileOptions::opt(opt))
            .unwrap()
            .0
    }

    fn single(nic: &mut Nic<impl Services>, t: u64, wid: u32, rid: u64, payload: &[u8]) {
        nic.ingest(SimTime(t), 9, LambdaFrame::request(wid, rid, payload.to_vec()));
    }

    #[test]
    fn web_cost_matches_hand_count() {
        let fw = firmware(WEB, 1);
        let mut nic = Nic::booted(NicModel::default(), fw, 1).unwrap();
        single(&mut nic, 0, 1, 1, b"");
        let out = nic.run_to_idle();
        let t = &nic.trace()[0];
        // chain compare, route default, enter, copy, exit, jump, two post
        // compares, respond
        let copy = 128 * (1 + 50u64.div_ceil(8));
        assert_eq!(t.cycles, 3 + copy + 5);
        assert_eq!(t.instructions, 3 + 128 + 5);
        assert_eq!(t.t_dispatch, t.t_arrive);
        assert_eq!(t.t_complete.0, (t.cycles * 1_000_000_000).div_ceil(633_000_000));
        let resp = out
            .iter()
            .find_map(|o| match o {
                NicOutput::Response { frames, dst, .. } => Some((frames.clone(), *dst)),
                _ => None,
            })
            .unwrap();
        assert_eq!(resp.1, 9);
        assert_eq!(resp.0[0].payload, vec![0x41; 1024]);
        assert!(resp.0[0].flags.is_response());
    }

    #[test]
    fn halt_only_is_sub_microsecond() {
        let fw = firmware(".lambda h\n.func m\n.entry\n halt FORWARD\n.end\n.rule 3 h\n", 0);
        let r = run(&NicModel::default(), &fw, &[(SimTime(0), 1, LambdaFrame::request(3, 1, vec![]))], 0).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert!(r.trace[0].latency() < SimTime::from_micros(1));
        assert_eq!(r.trace[0].outcome, Outcome::Completed { rc: rc::FORWARD });
    }

    #[test]
    fn empty_schedule_and_unknown_id() {
        let fw = firmware(WEB, 1);
        let r = run(&NicModel::default(), &fw, &[], 0).unwrap();
        assert!(r.trace.is_empty() && r.outputs.is_empty());
        let r = run(&NicModel::default(), &fw, &[(SimTime(5), 1, LambdaFrame::request(77, 1, vec![1]))], 0).unwrap();
        assert_eq!(r.trace[0].outcome, Outcome::ToHost);
        assert!(r.outputs.iter().any(|o| matches!(o, NicOutput::ToHost { payload, .. } if payload == &vec![1])));
    }

    #[test]
    fn reorder_charges_per_frame() {
        let fw = firmware(WEB, 1);
        let payload = vec![7u8; 400];
        let mut nic = Nic::booted(NicModel::default(), fw, 3).unwrap();
        single(&mut nic, 0, 1, 1, &payload);
        let mut frames = fragment(1, 2, FrameFlags::empty(), &payload, FRAME_HEADER_LEN + 100);
        frames.reverse();
        for (i, f) in frames.into_iter().enumerate() {
            nic.ingest(SimTime(1_000_000 + i as u64), 9, f);
        }
        nic.run_to_idle();
        let tr = nic.trace();
        assert_eq!(tr[1].frames, 4);
        assert_eq!(tr[1].instructions - tr[0].instructions, 120);
        assert_eq!(tr[1].cycles - tr[0].cycles, 120);
    }

    #[test]
    fn rdma_commits_to_emem() {
        let src = ".lambda img\n.func m\n.entry\n ldh r1, match.len\n memcpy [resp + 0], [payload + 0], r1\n halt FORWARD\n.end\n.rule 4 img\n";
        let fw = firmware(src, 1);
        let model = NicModel::default();
        let image: Vec<u8> = (0..65_536u32).map(|i| (i * 7 % 251) as u8).collect();
        let flags = FrameFlags::RDMA_WRITE;
        let mut frames = fragment(4, 1, flags, &image, model.mtu);
        let last = frames.len() - 1;
        frames[last].flags.insert(FrameFlags::EVENT_TRIGGER);
        frames.swap(0, 3);
        let mut nic = Nic::booted(model.clone(), fw, 0).unwrap();
        for (i, f) in frames.into_iter().enumerate() {
            nic.ingest(SimTime(i as u64 * 100), 2, f);
        }
        let out = nic.run_to_idle();
        let done: Vec<&Completion> = out
            .iter()
            .filter_map(|o| match o {
                NicOutput::Executed(c) => Some(&**c),
                _ => None,
            })
            .collect();
        assert_eq!(done.len(), 1);
        let (base, len) = done[0].rdma.unwrap();
        assert_eq!(len as usize, image.len());
        assert_eq!(nic.read_mem(Tier::Emem, base, image.len()), image);
        assert_eq!(done[0].result.response, image);
    }

    #[test]
    fn downtime_drops_then_recovers() {
        let fw = firmware(WEB, 1);
        let mut nic = Nic::booted(NicModel::default(), fw.clone(), 0).unwrap();
        let ready = nic.load_firmware(fw, SimTime::from_millis(1)).unwrap();
        assert_eq!(ready, SimTime::from_millis(201));
        single(&mut nic, 2_000_000, 1, 1, b"");
        single(&mut nic, 201_000_000, 1, 2, b"");
        nic.run_to_idle();
        assert_eq!(nic.trace()[0].outcome, Outcome::DroppedDowntime);
        assert!(nic.trace()[1].outcome.is_completed());
        let big = Firmware {
            listing: vec![fw_nop(); 20_000],
            ..firmware(WEB, 1)
        };
        assert!(matches!(
            nic.load_firmware(big, SimTime::ZERO),
            Err(LoadError::InstructionStore { total: 20_000, .. })
        ));
    }

    fn fw_nop() -> crate::compiler::FwInstr {
        crate::compiler::FwInstr {
            op: crate::compiler::Op::Finish,
            origin: crate::compiler::Origin::System,
        }
    }

    #[test]
    fn reassembly_timeout_and_duplicates() {
        let fw = firmware(WEB, 1);
        let mut nic = Nic::booted(NicModel::default(), fw, 0).unwrap();
        let frames = fragment(1, 5, FrameFlags::empty(), &[1u8; 3000], 1500);
        assert_eq!(frames.len(), 3);
        nic.ingest(SimTime(0), 1, frames[0].clone());
        nic.ingest(SimTime(1), 1, frames[0].clone());
        nic.run_to_idle();
        let t = nic.trace();
        assert_eq!(t[0].outcome, Outcome::Duplicate);
        assert_eq!(t[1].outcome, Outcome::DroppedTimeout);
        assert_eq!(t[1].t_complete, SimTime::from_millis(10));
        let frames_seen: u64 = t.iter().map(|r| r.frames as u64).sum();
        assert_eq!(frames_seen, nic.frames_ingested());
    }

    #[test]
    fn emitpkt_waits_for_reply() {
        let src = ".lambda kv\n.func m\n.entry\n emitpkt r1, 7, [payload + 0], 4\n memcpy [resp + 0], [reply + 0], r1\n halt FORWARD\n.end\n.rule 2 kv\n";
        let fw = firmware(src, 1);
        let echo = Echo {
            latency: SimTime::from_micros(20),
        };
        let mut nic = Nic::booted_with(NicModel::default(), fw, 0, echo).unwrap();
        single(&mut nic, 0, 2, 1, b"abcd");
        let out = nic.run_to_idle();
        assert!(nic.trace()[0].latency() >= SimTime::from_micros(20));
        assert!(out
            .iter()
            .any(|o| matches!(o, NicOutput::Response { frames, .. } if frames[0].payload == b"abcd")));
    }

    #[test]
    fn deterministic_given_seed() {
        let fw = firmware(WEB, 1);
        let sched: Vec<_> = (0..2000u64)
            .map(|i| (SimTime(i * 50), (i % 3) as u32, LambdaFrame::request(1, i, vec![])))
            .collect();
        let a = run(&NicModel::default(), &fw, &sched, 42).unwrap();
        let b = run(&NicModel::default(), &fw, &sched, 42).unwrap();
        assert_eq!(super::super::trace_text(&a.trace), super::super::trace_text(&b.trace));
        assert!(a.trace.iter().all(|r| r.outcome.is_completed()));
    }
}
