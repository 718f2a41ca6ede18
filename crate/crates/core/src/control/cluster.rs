//! Gateway and worker nodes in one virtual-time simulation.
//!
//! The gateway tags payloads with workload ids, fragments them, picks a node
//! round-robin and tracks each request until a full response comes back.
//! Frames cross a lossy link in both directions; on timeout the identical
//! frames go to the same node again.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::backend::Backend;
use super::manager::Deployment;
use crate::emulator::{LoadError, NicOutput, TraceRecord};
use crate::model::{
    fragment, Endpoint, FrameFlags, LambdaFrame, Push, Reassembler, RequestId, WorkloadId, DEFAULT_MTU,
};
use crate::time::SimTime;

/// Endpoint id of the gateway as seen by the nodes.
pub const GATEWAY: Endpoint = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub latency: SimTime,
    /// Extra delay drawn uniformly from `[0, jitter]`.
    pub jitter: SimTime,
    pub drop: f64,
    pub dup: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            latency: SimTime::from_nanos(500),
            jitter: SimTime::ZERO,
            drop: 0.0,
            dup: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub timeout: SimTime,
    pub max_retries: u32,
    /// Messages with more frames than this go out as RDMA writes.
    pub rdma_threshold: Option<u16>,
    pub mtu: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            timeout: SimTime::from_millis(2),
            max_retries: 5,
            rdma_threshold: Some(5),
            mtu: DEFAULT_MTU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("no workload named `{0}`")]
    UnknownName(String),
    #[error("no nodes deployed")]
    NoNodes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    /// No response after `attempts` sends.
    Exhausted { attempts: u32 },
    /// The node handed the request to the host and no fallback is configured.
    ToHost,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GatewayEvent {
    Completed {
        request_id: RequestId,
        workload_id: WorkloadId,
        node: usize,
        payload: Vec<u8>,
        retries: u32,
        submitted: SimTime,
        at: SimTime,
        /// Served by the host fallback.
        via_host: bool,
    },
    Failed {
        request_id: RequestId,
        workload_id: WorkloadId,
        failure: Failure,
        submitted: SimTime,
        at: SimTime,
    },
}

impl GatewayEvent {
    pub fn request_id(&self) -> RequestId {
        match self {
            GatewayEvent::Completed { request_id, .. } | GatewayEvent::Failed { request_id, .. } => *request_id,
        }
    }

    pub fn at(&self) -> SimTime {
        match self {
            GatewayEvent::Completed { at, .. } | GatewayEvent::Failed { at, .. } => *at,
        }
    }
}

#[derive(Debug, Clone)]
struct PendingRequest {
    wid: WorkloadId,
    node: usize,
    frames: Vec<LambdaFrame>,
    submitted: SimTime,
    sent_at: SimTime,
    retries: u32,
    response: Option<Reassembler>,
    via_host: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub submitted: u64,
    pub frames_sent: u64,
    pub frames_lost: u64,
    pub frames_duplicated: u64,
    pub retransmissions: u64,
    pub duplicate_responses: u64,
    /// Response frames for requests already finished.
    pub late_frames: u64,
    pub completed: u64,
    pub failed: u64,
}

enum Ev {
    Send { rid: RequestId },
    ToNode { node: usize, frame: LambdaFrame },
    ToHost { frame: LambdaFrame },
    ToGateway { frame: LambdaFrame, host: bool },
    Timeout { rid: RequestId, retries: u32 },
    Swap,
}

struct Queued {
    at: SimTime,
    seq: u64,
    ev: Ev,
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

/// Which component owns the next event.
#[derive(Clone, Copy)]
enum Next {
    Gateway,
    Node(usize),
    Host,
}

pub struct Cluster<B> {
    nodes: Vec<B>,
    node_ids: Vec<u16>,
    fallback: Option<Box<dyn Backend>>,
    link: LinkModel,
    cfg: GatewayConfig,
    rng: ChaCha8Rng,
    mapping: BTreeMap<String, WorkloadId>,
    active: Vec<usize>,
    staged: Option<(BTreeMap<String, WorkloadId>, Vec<usize>)>,
    rr: usize,
    next_rid: RequestId,
    pending: BTreeMap<RequestId, PendingRequest>,
    events: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    now: SimTime,
    stats: GatewayStats,
}

impl<B: Backend> Cluster<B> {
    /// `nodes[i]` is addressed by node id `i`.
    pub fn new(nodes: Vec<B>, link: LinkModel, cfg: GatewayConfig, seed: u64) -> Self {
        let node_ids = (0..nodes.len() as u16).collect();
        Cluster {
            nodes,
            node_ids,
            fallback: None,
            link,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mapping: BTreeMap::new(),
            active: Vec::new(),
            staged: None,
            rr: 0,
            next_rid: 1,
            pending: BTreeMap::new(),
            events: BinaryHeap::new(),
            seq: 0,
            now: SimTime::ZERO,
            stats: GatewayStats::default(),
        }
    }

    pub fn with_fallback(mut self, host: Box<dyn Backend>) -> Self {
        self.fallback = Some(host);
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    pub fn link_mut(&mut self) -> &mut LinkModel {
        &mut self.link
    }

    pub fn node(&self, i: usize) -> &B {
        &self.nodes[i]
    }

    pub fn node_mut(&mut self, i: usize) -> &mut B {
        &mut self.nodes[i]
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn stats(&self) -> &GatewayStats {
        &self.stats
    }

    pub fn mapping(&self) -> &BTreeMap<String, WorkloadId> {
        &self.mapping
    }

    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }

    /// Installs a name → id mapping for already-loaded nodes, effective now.
    pub fn set_mapping(&mut self, mapping: BTreeMap<String, WorkloadId>, nodes: &[usize]) {
        self.mapping = mapping;
        self.active = nodes.to_vec();
    }

    /// Loads each node's firmware at `at`; the gateway keeps the old mapping
    /// until every node is ready again. Returns that time.
    pub fn deploy(&mut self, d: &Deployment, at: SimTime) -> Result<SimTime, LoadError> {
        let at = at.max(self.now);
        let mut ready = at;
        let mut active = Vec::new();
        for (node, fw) in &d.firmware {
            let i = self
                .node_ids
                .iter()
                .position(|n| n == node)
                .expect("deployment targets a known node");
            let r = self.nodes[i].load(fw, &d.programs[node], at)?;
            ready = ready.max(r);
            active.push(i);
        }
        if let (Some(h), Some(p)) = (&mut self.fallback, d.programs.values().next()) {
            let fw = d.firmware.values().next().expect("non-empty deployment");
            h.load(fw, p, at)?;
        }
        for i in &self.active {
            if !active.contains(i) {
                active.push(*i);
            }
        }
        active.sort_unstable();
        self.staged = Some((d.mapping.clone(), active));
        self.push(ready, Ev::Swap);
        Ok(ready)
    }

    fn push(&mut self, at: SimTime, ev: Ev) {
        self.seq += 1;
        self.events.push(Reverse(Queued { at, seq: self.seq, ev }));
    }

    /// Queues `payload` for lambda `name` at time `at`.
    pub fn submit(&mut self, at: SimTime, name: &str, payload: &[u8]) -> Result<RequestId, RouteError> {
        let wid = *self
            .mapping
            .get(name)
            .ok_or_else(|| RouteError::UnknownName(name.to_string()))?;
        if self.active.is_empty() {
            return Err(RouteError::NoNodes);
        }
        let node = self.active[self.rr % self.active.len()];
        self.rr += 1;
        let rid = self.next_rid;
        self.next_rid += 1;
        let mut frames = fragment(wid, rid, FrameFlags::empty(), payload, self.cfg.mtu);
        if self.cfg.rdma_threshold.is_some_and(|t| frames.len() > t as usize) {
            for f in &mut frames {
                f.flags.insert(FrameFlags::RDMA_WRITE);
            }
            frames
                .last_mut()
                .expect("at least one frame")
                .flags
                .insert(FrameFlags::EVENT_TRIGGER);
        }
        let at = at.max(self.now);
        self.pending.insert(
            rid,
            PendingRequest {
                wid,
                node,
                frames,
                submitted: at,
                sent_at: at,
                retries: 0,
                response: None,
                via_host: false,
            },
        );
        self.stats.submitted += 1;
        self.push(at, Ev::Send { rid });
        Ok(rid)
    }

    /// Arrival times of one frame over the link (empty if lost).
    fn transit(&mut self) -> Vec<SimTime> {
        if self.link.drop > 0.0 && self.rng.gen::<f64>() < self.link.drop {
            self.stats.frames_lost += 1;
            return Vec::new();
        }
        let copies = if self.link.dup > 0.0 && self.rng.gen::<f64>() < self.link.dup {
            self.stats.frames_duplicated += 1;
            2
        } else {
            1
        };
        (0..copies)
            .map(|_| {
                let j = match self.link.jitter.as_nanos() {
                    0 => 0,
                    max => self.rng.gen_range(0..=max),
                };
                self.now + self.link.latency + SimTime::from_nanos(j)
            })
            .collect()
    }

    fn next(&self) -> Option<(SimTime, Next)> {
        let mut best = self.events.peek().map(|Reverse(q)| (q.at, Next::Gateway));
        let mut consider = |t: Option<SimTime>, who: Next| {
            if let Some(t) = t {
                if best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, who));
                }
            }
        };
        for (i, n) in self.nodes.iter().enumerate() {
            consider(n.next_event_time(), Next::Node(i));
        }
        if let Some(h) = &self.fallback {
            consider(h.next_event_time(), Next::Host);
        }
        best
    }

    pub fn next_event_time(&self) -> Option<SimTime> {
        self.next().map(|(t, _)| t)
    }

    pub fn is_idle(&self) -> bool {
        self.next().is_none()
    }

    /// Processes the earliest event anywhere in the cluster.
    pub fn step(&mut self) -> Vec<GatewayEvent> {
        let Some((t, who)) = self.next() else {
            return Vec::new();
        };
        self.now = self.now.max(t);
        let mut out = Vec::new();
        match who {
            Next::Gateway => {
                let Reverse(q) = self.events.pop().expect("peeked");
                self.on_event(q.ev, &mut out);
            }
            Next::Node(i) => {
                for o in self.nodes[i].step() {
                    self.on_output(o, false, &mut out);
                }
            }
            Next::Host => {
                let outs = self.fallback.as_mut().expect("host").step();
                for o in outs {
                    self.on_output(o, true, &mut out);
                }
            }
        }
        out
    }

    pub fn run_until(&mut self, t: SimTime) -> Vec<GatewayEvent> {
        let mut out = Vec::new();
        while self.next_event_time().is_some_and(|n| n <= t) {
            out.extend(self.step());
        }
        out
    }

    pub fn run_to_idle(&mut self) -> Vec<GatewayEvent> {
        let mut out = Vec::new();
        while !self.is_idle() {
            out.extend(self.step());
        }
        out
    }

    fn on_event(&mut self, ev: Ev, out: &mut Vec<GatewayEvent>) {
        match ev {
            Ev::Send { rid } => self.send(rid),
            Ev::ToNode { node, frame } => self.nodes[node].ingest(self.now, GATEWAY, frame),
            Ev::ToHost { frame } => {
                if let Some(h) = &mut self.fallback {
                    h.ingest(self.now, GATEWAY, frame);
                }
            }
            Ev::ToGateway { frame, host } => self.on_response_frame(frame, host, out),
            Ev::Timeout { rid, retries } => {
                let Some(p) = self.pending.get(&rid) else {
                    return;
                };
                if p.retries != retries {
                    return;
                }
                if p.retries >= self.cfg.max_retries {
                    let p = self.pending.remove(&rid).expect("present");
                    self.stats.failed += 1;
                    out.push(GatewayEvent::Failed {
                        request_id: rid,
                        workload_id: p.wid,
                        failure: Failure::Exhausted {
                            attempts: p.retries + 1,
                        },
                        submitted: p.submitted,
                        at: self.now,
                    });
                    return;
                }
                let p = self.pending.get_mut(&rid).expect("present");
                p.retries += 1;
                self.stats.retransmissions += 1;
                self.send(rid);
            }
            Ev::Swap => {
                if let Some((m, a)) = self.staged.take() {
                    self.mapping = m;
                    self.active = a;
                }
            }
        }
    }

    fn send(&mut self, rid: RequestId) {
        let Some(p) = self.pending.get_mut(&rid) else {
            return;
        };
        p.sent_at = self.now;
        let (node, frames, retries) = (p.node, p.frames.clone(), p.retries);
        for f in frames {
            self.stats.frames_sent += 1;
            for at in self.transit() {
                self.push(at, Ev::ToNode { node, frame: f.clone() });
            }
        }
        let deadline = self.now + self.cfg.timeout;
        self.push(deadline, Ev::Timeout { rid, retries });
    }

    fn on_output(&mut self, o: NicOutput, host: bool, out: &mut Vec<GatewayEvent>) {
        match o {
            NicOutput::Response { frames, .. } => {
                for f in frames {
                    for at in self.transit() {
                        self.push(at, Ev::ToGateway { frame: f.clone(), host });
                    }
                }
            }
            NicOutput::ToHost {
                request_id,
                workload_id,
                payload,
                ..
            } => {
                if !self.pending.contains_key(&request_id) {
                    return;
                }
                if host || self.fallback.is_none() {
                    let p = self.pending.remove(&request_id).expect("present");
                    self.stats.failed += 1;
                    out.push(GatewayEvent::Failed {
                        request_id,
                        workload_id,
                        failure: Failure::ToHost,
                        submitted: p.submitted,
                        at: self.now,
                    });
                    return;
                }
                self.pending.get_mut(&request_id).expect("present").via_host = true;
                let at = self.now + self.link.latency;
                for f in fragment(workload_id, request_id, FrameFlags::empty(), &payload, self.cfg.mtu) {
                    self.push(at, Ev::ToHost { frame: f });
                }
            }
            NicOutput::Executed(_) => {}
        }
    }

    fn on_response_frame(&mut self, frame: LambdaFrame, host: bool, out: &mut Vec<GatewayEvent>) {
        let rid = frame.request_id;
        let Some(p) = self.pending.get_mut(&rid) else {
            self.stats.late_frames += 1;
            return;
        };
        let complete = match &mut p.response {
            None => {
                p.response = Some(Reassembler::new(frame));
                true
            }
            Some(r) => match r.push(frame) {
                Ok(Push::Accepted) => true,
                _ => {
                    self.stats.duplicate_responses += 1;
                    false
                }
            },
        };
        if !complete || !p.response.as_ref().is_some_and(|r| r.is_complete()) {
            return;
        }
        let p = self.pending.remove(&rid).expect("present");
        let msg = p.response.expect("complete").finish().expect("complete");
        self.stats.completed += 1;
        out.push(GatewayEvent::Completed {
            request_id: rid,
            workload_id: p.wid,
            node: p.node,
            payload: msg.payload,
            retries: p.retries,
            submitted: p.submitted,
            at: self.now,
            via_host: host,
        });
    }

    /// Drains every node's trace, in node order.
    pub fn take_traces(&mut self) -> Vec<Vec<TraceRecord>> {
        self.nodes.iter_mut().map(|n| n.take_trace()).collect()
    }

    pub fn take_host_trace(&mut self) -> Vec<TraceRecord> {
        self.fallback.as_mut().map(|h| h.take_trace()).unwrap_or_default()
    }
}
