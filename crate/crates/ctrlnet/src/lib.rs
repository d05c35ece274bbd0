//! Distributed control plane for a roll surface.
//!
//! A server drives panels through one or more controllers; endpoints push
//! RSSI feedback straight to the server. All traffic is newline-delimited
//! text records ([`codec`]) over an in-process or loopback-socket
//! [`transport`]. [`run_distributed`] executes a control algorithm with every
//! command and report crossing the transport.

pub mod air;
pub mod capture;
pub mod codec;
pub mod nodes;
pub mod plant;
pub mod transport;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rollsurf_core::control::{run_with_plant, Algorithm, ControlError, ControlParams, MeasurementPolicy, SweepOutcome};
use rollsurf_core::{MotorSpec, Scene};
use thiserror::Error;

pub use air::Air;
pub use capture::{parse_capture, read_capture, replay_surface, CaptureRecord};
pub use codec::{decode_stream, encode_stream, DecodeError, Envelope, ErrorCode, Message, NodeId, NodeRole};
pub use nodes::{controller_node, endpoint_node, node_name, panel_node, NodeSummary, PanelState, SERVER};
pub use plant::{NetworkPlant, PlantStats, Timeouts};
pub use transport::{LinkModel, Mailbox, Network, TrafficTotals, TransportKind};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot bind loopback port {port}: {source}")]
    Bind { port: u16, source: std::io::Error },
    #[error("{0}")]
    Config(String),
    #[error("mailbox of node {0} closed")]
    Closed(NodeId),
    #[error("no hello from {0}")]
    Handshake(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("node thread failed: {0}")]
    Node(String),
}

impl From<NetError> for ControlError {
    fn from(e: NetError) -> Self {
        ControlError::Transport(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub transport: TransportKind,
    pub link: LinkModel,
    /// Panel `i` (in scene order) attaches to controller `i % controllers`.
    pub controllers: usize,
    pub timeouts: Timeouts,
    pub handshake_timeout: Duration,
    /// Endpoint repeat period and node poll period.
    pub feedback_interval: Duration,
    /// Panels sleep for this fraction of simulated motor time.
    pub motion_time_scale: f64,
    pub capture: Option<PathBuf>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            transport: TransportKind::InProcess,
            link: LinkModel::default(),
            controllers: 1,
            timeouts: Timeouts::default(),
            handshake_timeout: Duration::from_secs(5),
            feedback_interval: Duration::from_millis(20),
            motion_time_scale: 0.0,
            capture: None,
        }
    }
}

impl NetConfig {
    pub fn socket(port: u16) -> Self {
        Self {
            transport: TransportKind::Socket { port },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetStats {
    pub traffic: TrafficTotals,
    pub plant: PlantStats,
    /// Roll moves the panels actually performed.
    pub moves_applied: u64,
    /// Duplicate commands a panel answered without moving.
    pub duplicate_commands: u64,
    pub max_queue_depth: usize,
    pub feedback_reports: u64,
}

/// A running set of node threads around one server mailbox.
pub struct Deployment {
    net: Network,
    stop: Arc<AtomicBool>,
    threads: Vec<(NodeId, JoinHandle<Result<NodeSummary, NetError>>)>,
    air: Arc<Air>,
}

impl Deployment {
    /// Starts every node, completes the handshake and returns the server's
    /// plant.
    pub fn start(
        scene: &Scene,
        policy: MeasurementPolicy,
        run_seed: u64,
        motor: MotorSpec,
        cfg: &NetConfig,
    ) -> Result<(Self, NetworkPlant), NetError> {
        if cfg.controllers == 0 {
            return Err(NetError::Config("need at least one controller".into()));
        }
        let net = Network::new(cfg.transport, cfg.link, cfg.capture.as_deref())?;
        let stop = Arc::new(AtomicBool::new(false));
        let air = Arc::new(Air::new(scene));
        let scene = Arc::new(scene.clone());
        let server = net.join(SERVER, NodeRole::Server)?;
        let mut dep = Self {
            net,
            stop,
            threads: Vec::new(),
            air,
        };
        let ctx = |dep: &Self, id: NodeId, role: NodeRole| -> Result<nodes::NodeCtx, NetError> {
            Ok(nodes::NodeCtx {
                mailbox: dep.net.join(id, role)?,
                stop: dep.stop.clone(),
                interval: cfg.feedback_interval,
            })
        };

        let n_ctrl = cfg.controllers.min(scene.panels.len().max(1));
        let mut controller_of = BTreeMap::new();
        let mut attached: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n_ctrl];
        for (i, p) in scene.panels.iter().enumerate() {
            controller_of.insert(p.id, controller_node(i % n_ctrl));
            attached[i % n_ctrl].insert(p.id);
        }
        let mut expected: BTreeSet<NodeId> = BTreeSet::new();
        for (i, panels) in attached.into_iter().enumerate() {
            let c = ctx(&dep, controller_node(i), NodeRole::Controller)?;
            expected.insert(controller_node(i));
            let h = std::thread::spawn(move || nodes::controller_loop(c, i, panels));
            dep.threads.push((controller_node(i), h));
        }
        for (i, p) in scene.panels.iter().enumerate() {
            let c = ctx(&dep, panel_node(p.id), NodeRole::Panel)?;
            let state = PanelState::new(p, motor);
            let (air, scale, ctrl) = (dep.air.clone(), cfg.motion_time_scale, controller_node(i % n_ctrl));
            let h = std::thread::spawn(move || nodes::panel_loop(c, state, ctrl, air, scale));
            dep.threads.push((panel_node(p.id), h));
        }
        let mut by_rx: BTreeMap<u32, Vec<rollsurf_core::Link>> = BTreeMap::new();
        for l in &scene.links {
            by_rx.entry(l.rx).or_default().push(l.clone());
        }
        for (rx, links) in by_rx {
            let c = ctx(&dep, endpoint_node(rx), NodeRole::Endpoint)?;
            expected.insert(endpoint_node(rx));
            let (scene, air) = (scene.clone(), dep.air.clone());
            let h = std::thread::spawn(move || nodes::endpoint_loop(c, rx, scene, links, air, policy, run_seed));
            dep.threads.push((endpoint_node(rx), h));
        }

        let mut plant = NetworkPlant::new(server, scene, controller_of, cfg.timeouts);
        if let Err(e) = dep.handshake(&mut plant, expected, cfg.handshake_timeout) {
            let _ = dep.finish(plant);
            return Err(e);
        }
        Ok((dep, plant))
    }

    fn handshake(
        &self,
        plant: &mut NetworkPlant,
        mut waiting: BTreeSet<NodeId>,
        timeout: Duration,
    ) -> Result<(), NetError> {
        let deadline = Instant::now() + timeout;
        let mailbox = plant.mailbox_mut();
        while !waiting.is_empty() {
            let Some(env) = mailbox.recv_until(deadline)? else {
                let names: Vec<String> = waiting.iter().map(|&n| node_name(n)).collect();
                return Err(NetError::Handshake(names.join(", ")));
            };
            if let Message::Hello { .. } = env.msg {
                waiting.remove(&env.src);
                mailbox.send(
                    env.src,
                    Message::Hello {
                        node_id: SERVER,
                        role: NodeRole::Server,
                    },
                )?;
            }
        }
        Ok(())
    }

    /// Moves performed on the shared surface so far.
    pub fn moves_applied(&self) -> u64 {
        self.air.moves()
    }

    /// Stops every node and gathers statistics.
    pub fn finish(self, plant: NetworkPlant) -> Result<NetStats, NetError> {
        self.stop.store(true, Ordering::Relaxed);
        let mut stats = NetStats {
            plant: plant.stats,
            moves_applied: self.air.moves(),
            ..NetStats::default()
        };
        drop(plant);
        let mut first_err = None;
        for (id, h) in self.threads {
            match h.join() {
                Ok(Ok(NodeSummary::Panel(p))) => stats.duplicate_commands += p.duplicates,
                Ok(Ok(NodeSummary::Controller { max_queue_depth, .. })) => {
                    stats.max_queue_depth = stats.max_queue_depth.max(max_queue_depth)
                }
                Ok(Ok(NodeSummary::Endpoint { reports, .. })) => stats.feedback_reports += reports,
                Ok(Err(e)) => {
                    // Peers exiting first can close sockets under a node.
                    if !matches!(e, NetError::Io(_) | NetError::Closed(_)) {
                        first_err.get_or_insert(NetError::Node(format!("{}: {e}", node_name(id))));
                    }
                }
                Err(_) => {
                    first_err.get_or_insert(NetError::Node(format!("{} panicked", node_name(id))));
                }
            }
        }
        stats.traffic = self.net.shutdown()?;
        match first_err {
            Some(e) => Err(e),
            None => Ok(stats),
        }
    }
}

/// Runs `algorithm` with every command and report crossing the transport.
pub fn run_distributed(
    algorithm: Algorithm,
    scene: &Scene,
    params: &ControlParams,
    cfg: &NetConfig,
) -> Result<(SweepOutcome, NetStats), ControlError> {
    let (dep, plant) = Deployment::start(scene, params.policy, params.seed, params.motor, cfg)?;
    match run_with_plant(algorithm, scene, plant, params) {
        Ok((outcome, plant)) => {
            let stats = dep.finish(plant)?;
            Ok((outcome, stats))
        }
        Err(e) => {
            dep.stop.store(true, Ordering::Relaxed);
            for (_, h) in dep.threads {
                let _ = h.join();
            }
            let _ = dep.net.shutdown();
            Err(e)
        }
    }
}
