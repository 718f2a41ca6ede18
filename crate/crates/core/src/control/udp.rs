//! Frames over UDP: a loopback server in front of one emulated NIC, and a
//! small retrying client.

use std::collections::BTreeMap;
use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::emulator::{Nic, NicOutput};
use crate::ir::Services;
use crate::model::{
    decode_frame, encode_frame, fragment, Endpoint, FrameFlags, LambdaFrame, Push, Reassembler, RequestId,
    WorkloadId,
};

/// Partial messages older than this are discarded.
const STALE: Duration = Duration::from_secs(5);

#[derive(Debug, Default)]
pub struct ServeStats {
    pub datagrams: AtomicU64,
    pub malformed: AtomicU64,
    pub requests: AtomicU64,
    pub responses: AtomicU64,
}

type ClientKey = (SocketAddr, WorkloadId, RequestId);

struct State<S> {
    nic: Nic<S>,
    partial: BTreeMap<ClientKey, (Reassembler, Instant)>,
    endpoints: BTreeMap<SocketAddr, Endpoint>,
    next_rid: RequestId,
}

impl<S: Services> State<S> {
    /// Feeds one frame; returns datagrams to send once a request finishes.
    fn handle(&mut self, from: SocketAddr, frame: LambdaFrame, stats: &ServeStats) -> Vec<(SocketAddr, Vec<u8>)> {
        let now = Instant::now();
        self.partial.retain(|_, (_, t)| now.duration_since(*t) < STALE);
        let (wid, client_rid) = (frame.workload_id, frame.request_id);
        let frames = if frame.total <= 1 {
            vec![frame]
        } else {
            let key = (from, wid, client_rid);
            match self.partial.get_mut(&key) {
                Some((r, _)) => {
                    if !matches!(r.push(frame), Ok(Push::Accepted)) {
                        return Vec::new();
                    }
                }
                None => {
                    self.partial.insert(key, (Reassembler::new(frame), now));
                }
            }
            if !self.partial[&key].0.is_complete() {
                return Vec::new();
            }
            let (r, _) = self.partial.remove(&key).expect("present");
            r.finish().expect("complete").frames
        };
        let n = self.endpoints.len() as Endpoint;
        let src = *self.endpoints.entry(from).or_insert(n + 1);
        let rid = self.next_rid;
        self.next_rid += 1;
        stats.requests.fetch_add(1, Ordering::Relaxed);
        let at = self.nic.now();
        for mut f in frames {
            f.request_id = rid;
            self.nic.ingest(at, src, f);
        }
        let mut out = Vec::new();
        let mtu = self.nic.model().mtu;
        for o in self.nic.run_to_idle() {
            match o {
                NicOutput::Response { frames, .. } => {
                    for mut f in frames {
                        f.request_id = client_rid;
                        if let Ok(b) = encode_frame(&f, mtu) {
                            out.push((from, b));
                        }
                    }
                }
                NicOutput::Executed(c) => {
                    log::info!(
                        "{from} wid={} rid={client_rid} exit={:?} instr={}",
                        c.workload_id,
                        c.result.exit,
                        c.result.instructions
                    );
                }
                NicOutput::ToHost { .. } => {}
            }
        }
        self.nic.take_trace();
        out
    }
}

pub struct LoopbackServer {
    addr: SocketAddr,
    stats: Arc<ServeStats>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl LoopbackServer {
    /// Binds `bind` and serves with `workers` threads sharing `nic`.
    pub fn start<S>(bind: impl ToSocketAddrs, nic: Nic<S>, workers: usize) -> io::Result<Self>
    where
        S: Services + Send + 'static,
    {
        let socket = UdpSocket::bind(bind)?;
        socket.set_read_timeout(Some(Duration::from_millis(20)))?;
        let addr = socket.local_addr()?;
        let state = Arc::new(Mutex::new(State {
            nic,
            partial: BTreeMap::new(),
            endpoints: BTreeMap::new(),
            next_rid: 1,
        }));
        let stats = Arc::new(ServeStats::default());
        let stop = Arc::new(AtomicBool::new(false));
        let mut handles = Vec::new();
        for _ in 0..workers.max(1) {
            let sock = socket.try_clone()?;
            let (state, stats, stop) = (state.clone(), stats.clone(), stop.clone());
            handles.push(std::thread::spawn(move || {
                let mut buf = vec![0u8; 65536];
                while !stop.load(Ordering::Relaxed) {
                    let (n, from) = match sock.recv_from(&mut buf) {
                        Ok(x) => x,
                        Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                            continue
                        }
                        Err(e) => {
                            log::warn!("recv: {e}");
                            continue;
                        }
                    };
                    stats.datagrams.fetch_add(1, Ordering::Relaxed);
                    let frame = match decode_frame(&buf[..n]) {
                        Ok(f) if !f.flags.is_response() => f,
                        Ok(_) | Err(_) => {
                            stats.malformed.fetch_add(1, Ordering::Relaxed);
                            log::debug!("malformed datagram from {from}");
                            continue;
                        }
                    };
                    let replies = state.lock().expect("state lock").handle(from, frame, &stats);
                    for (to, bytes) in replies {
                        if sock.send_to(&bytes, to).is_ok() {
                            stats.responses.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                }
            }));
        }
        Ok(LoopbackServer {
            addr,
            stats,
            stop,
            workers: handles,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &ServeStats {
        &self.stats
    }

    pub fn malformed(&self) -> u64 {
        self.stats.malformed.load(Ordering::Relaxed)
    }

    /// Blocks until the workers exit (never, unless `shutdown` is called elsewhere).
    pub fn join(mut self) {
        for h in self.workers.drain(..) {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for h in self.workers.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for LoopbackServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub timeout: Duration,
    pub max_retries: u32,
    pub mtu: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            timeout: Duration::from_millis(50),
            max_retries: 5,
            mtu: crate::model::DEFAULT_MTU,
        }
    }
}

/// Sends one request and waits for its full response, resending on timeout.
pub fn invoke(
    server: SocketAddr,
    wid: WorkloadId,
    rid: RequestId,
    payload: &[u8],
    cfg: &ClientConfig,
) -> io::Result<Vec<u8>> {
    let sock = UdpSocket::bind(("127.0.0.1", 0))?;
    let frames = fragment(wid, rid, FrameFlags::empty(), payload, cfg.mtu);
    let bytes: Vec<Vec<u8>> = frames
        .iter()
        .map(|f| encode_frame(f, cfg.mtu).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string())))
        .collect::<Result<_, _>>()?;
    let mut buf = vec![0u8; 65536];
    let mut resp: Option<Reassembler> = None;
    for _ in 0..=cfg.max_retries {
        for b in &bytes {
            sock.send_to(b, server)?;
        }
        let deadline = Instant::now() + cfg.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            sock.set_read_timeout(Some(left))?;
            let n = match sock.recv(&mut buf) {
                Ok(n) => n,
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => break,
                Err(e) => return Err(e),
            };
            let Ok(f) = decode_frame(&buf[..n]) else { continue };
            if !f.flags.is_response() || f.request_id != rid {
                continue;
            }
            match &mut resp {
                None => resp = Some(Reassembler::new(f)),
                Some(r) => {
                    let _ = r.push(f);
                }
            }
            if resp.as_ref().is_some_and(|r| r.is_complete()) {
                let msg = resp.take().expect("complete").finish().expect("complete");
                return Ok(msg.payload);
            }
        }
    }
    Err(io::Error::new(
        io::ErrorKind::TimedOut,
        format!("no response after {} attempts", cfg.max_retries + 1),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{compile, CompileOptions};
    use crate::emulator::NicModel;
    use crate::ir::parse_program;

    const ECHO: &str = ".lambda echo\n.func m\n.entry\n memcpy [resp + 0], [payload + 0], 2000\n halt FORWARD\n.end\n.rule 3 echo\n";

    fn server() -> LoopbackServer {
        let model = NicModel::default();
        let (fw, _) = compile(&parse_program(ECHO).unwrap(), &model, &CompileOptions::default()).unwrap();
        let nic = Nic::booted(model, fw, 1).unwrap();
        LoopbackServer::start("127.0.0.1:0", nic, 4).unwrap()
    }

    #[test]
    fn round_trip_and_malformed() {
        let s = server();
        let payload: Vec<u8> = (0..2000u32).map(|i| i as u8).collect();
        let got = invoke(s.local_addr(), 3, 77, &payload, &ClientConfig::default()).unwrap();
        assert_eq!(got, payload);
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        sock.send_to(b"\x00\x01garbage-garbage-garbage", s.local_addr()).unwrap();
        let t = Instant::now();
        while s.malformed() == 0 && t.elapsed() < Duration::from_secs(2) {
            std::thread::sleep(Duration::from_millis(5));
        }
        assert_eq!(s.malformed(), 1);
        s.shutdown();
    }
}
