//! Message carriers between nodes.
//!
//! Every node owns a [`Mailbox`]. Sending stamps an [`Envelope`], applies the
//! deterministic loss decision and hands the record to the carrier: a
//! channel for the in-process transport, or a TCP connection to a loopback
//! hub for the socket transport. Latency and jitter are applied on the
//! receiving side, clamped so each (src, dst) pair stays FIFO.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering as AtomicOrdering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use rollsurf_core::seed;

use crate::codec::{Envelope, Message, NodeId, NodeRole};
use crate::NetError;

/// Destination id the socket hub answers to during registration.
pub const HUB: NodeId = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProcess,
    /// Loopback TCP hub; port 0 picks a free one.
    Socket {
        port: u16,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub latency: Duration,
    pub jitter: Duration,
    /// Per-message drop probability.
    pub loss: f64,
    pub seed: u64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            latency: Duration::ZERO,
            jitter: Duration::ZERO,
            loss: 0.0,
            seed: 0,
        }
    }
}

impl LinkModel {
    fn unit(&self, tag: u64, src: NodeId, dst: NodeId, seq: u64) -> f64 {
        let h = seed::derive(self.seed, &[tag, src as u64, dst as u64, seq]);
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn dropped(&self, src: NodeId, dst: NodeId, seq: u64) -> bool {
        self.loss > 0.0 && self.unit(0x1055, src, dst, seq) < self.loss
    }

    pub fn delay(&self, src: NodeId, dst: NodeId, seq: u64) -> Duration {
        if self.jitter.is_zero() {
            return self.latency;
        }
        self.latency + self.jitter.mul_f64(self.unit(0x717e, src, dst, seq))
    }

    /// How long a sender waits for an answer before resending.
    pub fn retry_interval(&self) -> Duration {
        ((self.latency + self.jitter) * 2).max(Duration::from_millis(20))
    }
}

#[derive(Debug, Default)]
pub struct Counters {
    pub sent: AtomicU64,
    pub dropped: AtomicU64,
}

struct Shared {
    start: Instant,
    model: LinkModel,
    capture: Option<Mutex<BufWriter<File>>>,
    counters: Counters,
}

impl Shared {
    fn now_us(&self) -> u64 {
        self.start.elapsed().as_micros() as u64
    }
}

type Directory = Arc<RwLock<HashMap<NodeId, Sender<Envelope>>>>;

enum Carrier {
    Local(Directory),
    Socket(Mutex<TcpStream>),
}

/// A node's view of the network.
pub struct Mailbox {
    id: NodeId,
    shared: Arc<Shared>,
    carrier: Carrier,
    inbox: Receiver<Envelope>,
    pending: BinaryHeap<Pending>,
    last_from: HashMap<NodeId, Instant>,
    seq_to: Mutex<HashMap<NodeId, u64>>,
    arrivals: u64,
}

struct Pending {
    at: Instant,
    n: u64,
    env: Envelope,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.n == other.n
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Min-heap on (arrival time, arrival order).
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.n).cmp(&(self.at, self.n))
    }
}

impl Mailbox {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn model(&self) -> &LinkModel {
        &self.shared.model
    }

    pub fn send(&self, dst: NodeId, msg: Message) -> Result<(), NetError> {
        let seq = {
            let mut m = self.seq_to.lock().expect("seq lock");
            let s = m.entry(dst).or_insert(0);
            *s += 1;
            *s
        };
        let env = Envelope {
            src: self.id,
            dst,
            seq,
            sent_us: self.shared.now_us(),
            msg,
        };
        let lost = self.shared.model.dropped(self.id, dst, seq);
        self.shared.counters.sent.fetch_add(1, AtomicOrdering::Relaxed);
        if let Some(cap) = &self.shared.capture {
            let mut w = cap.lock().expect("capture lock");
            writeln!(w, "{} {}", if lost { "lost" } else { "ok" }, env.encode())?;
        }
        if lost {
            self.shared.counters.dropped.fetch_add(1, AtomicOrdering::Relaxed);
            return Ok(());
        }
        match &self.carrier {
            Carrier::Local(dir) => {
                if let Some(tx) = dir.read().expect("directory lock").get(&dst) {
                    // A receiver that already left is the same as a lost packet.
                    let _ = tx.send(env);
                }
                Ok(())
            }
            Carrier::Socket(stream) => {
                let mut s = stream.lock().expect("stream lock");
                let mut line = env.encode();
                line.push('\n');
                s.write_all(line.as_bytes())?;
                Ok(())
            }
        }
    }

    fn admit(&mut self, env: Envelope) {
        let sent = self.shared.start + Duration::from_micros(env.sent_us);
        let mut at = sent + self.shared.model.delay(env.src, env.dst, env.seq);
        let last = self.last_from.entry(env.src).or_insert(at);
        if at < *last {
            at = *last;
        }
        *last = at;
        self.arrivals += 1;
        self.pending.push(Pending {
            at,
            n: self.arrivals,
            env,
        });
    }

    /// Next delivered message, or `None` once `deadline` passes.
    pub fn recv_until(&mut self, deadline: Instant) -> Result<Option<Envelope>, NetError> {
        loop {
            while let Ok(env) = self.inbox.try_recv() {
                self.admit(env);
            }
            let now = Instant::now();
            if let Some(p) = self.pending.peek() {
                if p.at <= now {
                    return Ok(self.pending.pop().map(|p| p.env));
                }
            }
            if now >= deadline {
                return Ok(None);
            }
            let wake = self.pending.peek().map_or(deadline, |p| p.at.min(deadline));
            match self.inbox.recv_timeout(wake.saturating_duration_since(now)) {
                Ok(env) => self.admit(env),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => {
                    if self.pending.is_empty() {
                        return Err(NetError::Closed(self.id));
                    }
                    std::thread::sleep(wake.saturating_duration_since(Instant::now()));
                }
            }
        }
    }

    pub fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Envelope>, NetError> {
        self.recv_until(Instant::now() + timeout)
    }
}

impl Drop for Mailbox {
    fn drop(&mut self) {
        if let Carrier::Socket(s) = &self.carrier {
            if let Ok(s) = s.lock() {
                let _ = s.shutdown(Shutdown::Both);
            }
        }
    }
}

/// Totals over every mailbox of one network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrafficTotals {
    pub sent: u64,
    pub dropped: u64,
}

pub struct Network {
    shared: Arc<Shared>,
    inner: Inner,
}

enum Inner {
    Local(Directory),
    Socket(Hub),
}

impl Network {
    pub fn new(kind: TransportKind, model: LinkModel, capture: Option<&Path>) -> Result<Self, NetError> {
        if !(0.0..1.0).contains(&model.loss) {
            return Err(NetError::Config("loss probability must be in [0, 1)".into()));
        }
        let capture = match capture {
            Some(p) => Some(Mutex::new(BufWriter::new(File::create(p)?))),
            None => None,
        };
        let shared = Arc::new(Shared {
            start: Instant::now(),
            model,
            capture,
            counters: Counters::default(),
        });
        let inner = match kind {
            TransportKind::InProcess => Inner::Local(Arc::default()),
            TransportKind::Socket { port } => Inner::Socket(Hub::bind(port)?),
        };
        Ok(Self { shared, inner })
    }

    /// Address of the socket hub, if this is a socket network.
    pub fn local_addr(&self) -> Option<SocketAddr> {
        match &self.inner {
            Inner::Socket(h) => Some(h.addr),
            Inner::Local(_) => None,
        }
    }

    pub fn join(&self, id: NodeId, role: NodeRole) -> Result<Mailbox, NetError> {
        let (tx, rx) = crossbeam_channel::unbounded();
        let carrier = match &self.inner {
            Inner::Local(dir) => {
                dir.write().expect("directory lock").insert(id, tx);
                Carrier::Local(dir.clone())
            }
            Inner::Socket(hub) => {
                let mut stream = TcpStream::connect(hub.addr)?;
                stream.set_nodelay(true)?;
                let hello = Envelope {
                    src: id,
                    dst: HUB,
                    seq: 0,
                    sent_us: 0,
                    msg: Message::Hello { node_id: id, role },
                };
                stream.write_all(format!("{}\n", hello.encode()).as_bytes())?;
                let reader = BufReader::new(stream.try_clone()?);
                std::thread::spawn(move || {
                    for line in reader.lines() {
                        let Ok(line) = line else { break };
                        match Envelope::decode(&line) {
                            Ok(env) => {
                                if tx.send(env).is_err() {
                                    break;
                                }
                            }
                            Err(e) => log::warn!("node {id}: dropping malformed record: {e}"),
                        }
                    }
                });
                Carrier::Socket(Mutex::new(stream))
            }
        };
        Ok(Mailbox {
            id,
            shared: self.shared.clone(),
            carrier,
            inbox: rx,
            pending: BinaryHeap::new(),
            last_from: HashMap::new(),
            seq_to: Mutex::new(HashMap::new()),
            arrivals: 0,
        })
    }

    pub fn totals(&self) -> TrafficTotals {
        TrafficTotals {
            sent: self.shared.counters.sent.load(AtomicOrdering::Relaxed),
            dropped: self.shared.counters.dropped.load(AtomicOrdering::Relaxed),
        }
    }

    /// Flushes the capture log and stops the hub.
    pub fn shutdown(self) -> Result<TrafficTotals, NetError> {
        let totals = self.totals();
        if let Some(cap) = &self.shared.capture {
            cap.lock().expect("capture lock").flush()?;
        }
        if let Inner::Socket(hub) = self.inner {
            hub.stop();
        }
        Ok(totals)
    }
}

struct Hub {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

#[derive(Default)]
struct Routes {
    writers: HashMap<NodeId, TcpStream>,
    /// Lines for nodes that have not registered yet.
    waiting: HashMap<NodeId, Vec<String>>,
}

impl Hub {
    fn bind(port: u16) -> Result<Self, NetError> {
        let listener = TcpListener::bind(("127.0.0.1", port)).map_err(|e| NetError::Bind { port, source: e })?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let conns: Arc<Mutex<Vec<TcpStream>>> = Arc::default();
        let routes: Arc<Mutex<Routes>> = Arc::default();
        let accept = {
            let stop = stop.clone();
            let conns = conns.clone();
            std::thread::spawn(move || {
                while !stop.load(AtomicOrdering::Relaxed) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let _ = stream.set_nonblocking(false);
                            let _ = stream.set_nodelay(true);
                            if let Ok(c) = stream.try_clone() {
                                conns.lock().expect("conns lock").push(c);
                            }
                            let routes = routes.clone();
                            std::thread::spawn(move || route(stream, routes));
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(1));
                        }
                        Err(e) => {
                            log::warn!("hub accept failed: {e}");
                            break;
                        }
                    }
                }
            })
        };
        Ok(Self {
            addr,
            stop,
            conns,
            accept: Some(accept),
        })
    }

    fn stop(mut self) {
        self.stop.store(true, AtomicOrdering::Relaxed);
        for c in self.conns.lock().expect("conns lock").drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn route(stream: TcpStream, routes: Arc<Mutex<Routes>>) {
    let Ok(read_half) = stream.try_clone() else { return };
    for line in BufReader::new(read_half).lines() {
        let Ok(line) = line else { break };
        let env = match Envelope::decode(&line) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("hub: malformed record: {e}");
                continue;
            }
        };
        let mut r = routes.lock().expect("routes lock");
        if env.dst == HUB {
            let Ok(w) = stream.try_clone() else { return };
            let mut w = w;
            for queued in r.waiting.remove(&env.src).unwrap_or_default() {
                let _ = w.write_all(queued.as_bytes());
            }
            r.writers.insert(env.src, w);
            continue;
        }
        let mut out = line;
        out.push('\n');
        match r.writers.get_mut(&env.dst) {
            Some(w) => {
                let _ = w.write_all(out.as_bytes());
            }
            None => r.waiting.entry(env.dst).or_default().push(out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ping_pong(kind: TransportKind, model: LinkModel) -> Vec<u64> {
        let net = Network::new(kind, model, None).unwrap();
        let a = net.join(1, NodeRole::Server).unwrap();
        let mut b = net.join(2, NodeRole::Panel).unwrap();
        for i in 0..50 {
            a.send(
                2,
                Message::RssiFeedback {
                    link_id: 0,
                    value_dbm: i as f64,
                    epoch: i,
                    seq: i,
                },
            )
            .unwrap();
        }
        let mut got = Vec::new();
        while let Some(env) = b.recv_timeout(Duration::from_millis(200)).unwrap() {
            assert_eq!(env.src, 1);
            if let Message::RssiFeedback { epoch, .. } = env.msg {
                got.push(epoch);
            }
        }
        drop((a, b));
        net.shutdown().unwrap();
        got
    }

    #[test]
    fn fifo_under_jitter_on_both_carriers() {
        let model = LinkModel {
            latency: Duration::from_millis(1),
            jitter: Duration::from_millis(3),
            ..LinkModel::default()
        };
        for kind in [TransportKind::InProcess, TransportKind::Socket { port: 0 }] {
            assert_eq!(ping_pong(kind, model), (0..50).collect::<Vec<_>>());
        }
    }

    #[test]
    fn loss_is_deterministic() {
        let model = LinkModel {
            loss: 0.3,
            seed: 9,
            ..LinkModel::default()
        };
        let a = ping_pong(TransportKind::InProcess, model);
        let b = ping_pong(TransportKind::Socket { port: 0 }, model);
        assert_eq!(a, b);
        assert!(a.len() > 20 && a.len() < 50);
        let expected: Vec<u64> = (0..50).filter(|&i| !model.dropped(1, 2, i + 1)).collect();
        assert_eq!(a, expected);
    }

    #[test]
    fn latency_delays_delivery() {
        let net = Network::new(
            TransportKind::InProcess,
            LinkModel {
                latency: Duration::from_millis(30),
                ..LinkModel::default()
            },
            None,
        )
        .unwrap();
        let a = net.join(1, NodeRole::Server).unwrap();
        let mut b = net.join(2, NodeRole::Panel).unwrap();
        let t0 = Instant::now();
        a.send(
            2,
            Message::Hello {
                node_id: 1,
                role: NodeRole::Server,
            },
        )
        .unwrap();
        assert!(b.recv_timeout(Duration::from_millis(5)).unwrap().is_none());
        assert!(b.recv_timeout(Duration::from_millis(200)).unwrap().is_some());
        assert!(t0.elapsed() >= Duration::from_millis(30));
    }

    #[test]
    fn retry_interval_has_a_floor() {
        assert_eq!(LinkModel::default().retry_interval(), Duration::from_millis(20));
        let m = LinkModel {
            latency: Duration::from_millis(15),
            jitter: Duration::from_millis(5),
            ..LinkModel::default()
        };
        assert_eq!(m.retry_interval(), Duration::from_millis(40));
    }
}
