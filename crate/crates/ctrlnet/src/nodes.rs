//! Node processes: panels, controllers and feedback endpoints.
//!
//! Each node is a sequential loop over its mailbox. The server side lives in
//! [`crate::plant::NetworkPlant`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rollsurf_core::control::{m_to_mm, mm_to_m, reading_at_epoch, MeasurementPolicy};
use rollsurf_core::scene::{EndpointId, Panel};
use rollsurf_core::{Link, MotorSpec, RollId, Scene};

use crate::air::Air;
use crate::codec::{ErrorCode, Message, NodeId, NodeRole};
use crate::transport::Mailbox;
use crate::NetError;

pub const SERVER: NodeId = 0;

pub fn controller_node(index: usize) -> NodeId {
    1 + index as NodeId
}

pub fn panel_node(panel_id: u32) -> NodeId {
    10_000 + panel_id
}

pub fn endpoint_node(endpoint: EndpointId) -> NodeId {
    1_000_000 + endpoint
}

/// Human-readable name of a node id.
pub fn node_name(id: NodeId) -> String {
    match id {
        SERVER => "server".into(),
        1..=9_999 => format!("controller {}", id - 1),
        10_000..=999_999 => format!("panel {}", id - 10_000),
        _ => format!("endpoint {}", id - 1_000_000),
    }
}

/// Command handling of one panel, independent of any transport.
#[derive(Debug, Clone)]
pub struct PanelState {
    pub panel_id: u32,
    motor: MotorSpec,
    bounds_mm: BTreeMap<u32, (u32, u32)>,
    lengths_mm: BTreeMap<u32, u32>,
    last_epoch: u64,
    last_ack: Option<(u32, u64, u32)>,
    pub applied: u64,
    pub duplicates: u64,
    pub motion_seconds: f64,
}

/// Result of feeding one command to a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelOutcome {
    pub reply: Message,
    /// Roll and achieved length, when the command moved a roll.
    pub moved: Option<(u32, u32)>,
    pub motion_seconds: f64,
}

impl PanelState {
    pub fn new(panel: &Panel, motor: MotorSpec) -> Self {
        Self {
            panel_id: panel.id,
            motor,
            bounds_mm: panel
                .rolls
                .iter()
                .map(|r| (r.id.index, (m_to_mm(r.off_length()), m_to_mm(r.max_length()))))
                .collect(),
            lengths_mm: panel
                .rolls
                .iter()
                .map(|r| (r.id.index, m_to_mm(r.exposed_length)))
                .collect(),
            last_epoch: 0,
            last_ack: None,
            applied: 0,
            duplicates: 0,
            motion_seconds: 0.0,
        }
    }

    pub fn lengths_mm(&self) -> &BTreeMap<u32, u32> {
        &self.lengths_mm
    }

    pub fn last_epoch(&self) -> u64 {
        self.last_epoch
    }

    fn error(&self, code: ErrorCode, detail: String) -> PanelOutcome {
        PanelOutcome {
            reply: Message::Error {
                code,
                detail: format!("panel={} {detail}", self.panel_id),
            },
            moved: None,
            motion_seconds: 0.0,
        }
    }

    pub fn handle_set(&mut self, roll: u32, target_mm: u32, epoch: u64) -> PanelOutcome {
        if let Some((r, e, actual)) = self.last_ack {
            if r == roll && e == epoch {
                self.duplicates += 1;
                return PanelOutcome {
                    reply: Message::Ack {
                        panel_id: self.panel_id,
                        roll_id: roll,
                        epoch,
                        actual_mm: actual,
                    },
                    moved: None,
                    motion_seconds: 0.0,
                };
            }
        }
        if epoch <= self.last_epoch {
            return self.error(
                ErrorCode::Stale,
                format!("roll={roll} epoch={epoch} last={}", self.last_epoch),
            );
        }
        let Some(&(lo, hi)) = self.bounds_mm.get(&roll) else {
            return self.error(ErrorCode::Unroutable, format!("roll={roll} no such roll"));
        };
        if target_mm < lo || target_mm > hi {
            return self.error(
                ErrorCode::Bounds,
                format!("roll={roll} epoch={epoch} target {target_mm} mm outside [{lo}, {hi}]"),
            );
        }
        let from = mm_to_m(self.lengths_mm[&roll]);
        let actual = m_to_mm(self.motor.quantize(mm_to_m(target_mm)));
        let seconds = self.motor.move_time((mm_to_m(actual) - from).abs()).unwrap_or(0.0);
        self.lengths_mm.insert(roll, actual);
        self.last_epoch = epoch;
        self.last_ack = Some((roll, epoch, actual));
        self.applied += 1;
        self.motion_seconds += seconds;
        PanelOutcome {
            reply: Message::Ack {
                panel_id: self.panel_id,
                roll_id: roll,
                epoch,
                actual_mm: actual,
            },
            moved: Some((roll, actual)),
            motion_seconds: seconds,
        }
    }
}

/// What a node thread reports when it exits.
#[derive(Debug, Clone)]
pub enum NodeSummary {
    Panel(PanelState),
    Controller {
        index: usize,
        forwarded: u64,
        max_queue_depth: usize,
    },
    Endpoint {
        endpoint: EndpointId,
        reports: u64,
    },
}

pub struct NodeCtx {
    pub mailbox: Mailbox,
    pub stop: Arc<AtomicBool>,
    pub interval: Duration,
}

impl NodeCtx {
    fn stopped(&self) -> bool {
        self.stop.load(Ordering::Relaxed)
    }
}

pub fn panel_loop(
    mut ctx: NodeCtx,
    mut state: PanelState,
    controller: NodeId,
    air: Arc<Air>,
    time_scale: f64,
) -> Result<NodeSummary, NetError> {
    let me = ctx.mailbox.id();
    let hello = Message::Hello {
        node_id: me,
        role: NodeRole::Panel,
    };
    let mut joined = false;
    let mut next_hello = Instant::now();
    while !ctx.stopped() {
        if !joined && Instant::now() >= next_hello {
            ctx.mailbox.send(controller, hello.clone())?;
            next_hello = Instant::now() + ctx.interval;
        }
        let Some(env) = ctx.mailbox.recv_timeout(ctx.interval)? else {
            continue;
        };
        if env.src != controller {
            continue;
        }
        joined = true;
        if let Message::SetLength {
            panel_id,
            roll_id,
            target_mm,
            epoch,
        } = env.msg
        {
            let out = if panel_id == state.panel_id {
                state.handle_set(roll_id, target_mm, epoch)
            } else {
                state.error(ErrorCode::Unroutable, format!("command for panel {panel_id}"))
            };
            if time_scale > 0.0 && out.motion_seconds > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(out.motion_seconds * time_scale));
            }
            if let Some((roll, mm)) = out.moved {
                air.apply(RollId::new(state.panel_id, roll), mm, epoch);
            }
            ctx.mailbox.send(controller, out.reply)?;
        }
    }
    Ok(NodeSummary::Panel(state))
}

pub fn controller_loop(mut ctx: NodeCtx, index: usize, panels: BTreeSet<u32>) -> Result<NodeSummary, NetError> {
    let me = ctx.mailbox.id();
    let mut seen: BTreeSet<u32> = BTreeSet::new();
    let mut joined = false;
    let mut next_hello = Instant::now();
    let mut in_flight: HashMap<u32, usize> = HashMap::new();
    let mut max_depth = 0usize;
    let mut forwarded = 0u64;
    while !ctx.stopped() {
        if !joined && seen.len() == panels.len() && Instant::now() >= next_hello {
            ctx.mailbox.send(
                SERVER,
                Message::Hello {
                    node_id: me,
                    role: NodeRole::Controller,
                },
            )?;
            next_hello = Instant::now() + ctx.interval;
        }
        let Some(env) = ctx.mailbox.recv_timeout(ctx.interval)? else {
            continue;
        };
        match env.msg {
            Message::Hello {
                role: NodeRole::Panel, ..
            } => {
                let p = env.src.wrapping_sub(panel_node(0));
                if panels.contains(&p) {
                    seen.insert(p);
                    ctx.mailbox.send(
                        env.src,
                        Message::Hello {
                            node_id: me,
                            role: NodeRole::Controller,
                        },
                    )?;
                }
            }
            Message::Hello { .. } if env.src == SERVER => joined = true,
            Message::SetLength { panel_id, .. } if env.src == SERVER => {
                joined = true;
                if panels.contains(&panel_id) {
                    let depth = in_flight.entry(panel_id).or_insert(0);
                    *depth += 1;
                    max_depth = max_depth.max(*depth);
                    forwarded += 1;
                    ctx.mailbox.send(panel_node(panel_id), env.msg)?;
                } else {
                    ctx.mailbox.send(
                        SERVER,
                        Message::Error {
                            code: ErrorCode::Unroutable,
                            detail: format!("panel={panel_id} not attached to controller {index}"),
                        },
                    )?;
                }
            }
            msg @ (Message::Ack { .. } | Message::Error { .. }) if env.src != SERVER => {
                let p = env.src.wrapping_sub(panel_node(0));
                if let Some(d) = in_flight.get_mut(&p) {
                    *d = d.saturating_sub(1);
                }
                ctx.mailbox.send(SERVER, msg)?;
            }
            other => log::debug!(
                "controller {index}: ignoring {} from {}",
                other.kind(),
                node_name(env.src)
            ),
        }
    }
    Ok(NodeSummary::Controller {
        index,
        forwarded,
        max_queue_depth: max_depth,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn endpoint_loop(
    mut ctx: NodeCtx,
    endpoint: EndpointId,
    scene: Arc<Scene>,
    links: Vec<Link>,
    air: Arc<Air>,
    policy: MeasurementPolicy,
    run_seed: u64,
) -> Result<NodeSummary, NetError> {
    let me = ctx.mailbox.id();
    let mut joined = false;
    let mut seq = 0u64;
    let mut reports = 0u64;
    let mut last: Option<(u64, Vec<f64>)> = None;
    let mut next_send = Instant::now();
    let mut version = air.version();
    while !ctx.stopped() {
        while let Some(env) = ctx.mailbox.recv_timeout(Duration::ZERO)? {
            if env.src == SERVER && matches!(env.msg, Message::Hello { .. }) {
                joined = true;
            }
        }
        let snap = air.snapshot();
        let fresh = last.as_ref().is_none_or(|(e, _)| *e != snap.watermark);
        if snap.settled && (fresh || Instant::now() >= next_send) {
            if fresh {
                let mut values = Vec::with_capacity(links.len());
                for l in &links {
                    let lengths = &snap.lengths_mm;
                    let v = reading_at_epoch(&scene, l, |r| mm_to_m(lengths[&r]), &policy, run_seed, snap.watermark)
                        .map_err(|e| NetError::Config(e.to_string()))?;
                    values.push(v);
                }
                last = Some((snap.watermark, values));
            }
            let (epoch, values) = last.as_ref().expect("just measured");
            for (l, &v) in links.iter().zip(values) {
                seq += 1;
                reports += 1;
                ctx.mailbox.send(
                    SERVER,
                    Message::RssiFeedback {
                        link_id: l.id,
                        value_dbm: v,
                        epoch: *epoch,
                        seq,
                    },
                )?;
            }
            if !joined {
                ctx.mailbox.send(
                    SERVER,
                    Message::Hello {
                        node_id: me,
                        role: NodeRole::Endpoint,
                    },
                )?;
            }
            next_send = Instant::now() + ctx.interval;
        } else if !joined && Instant::now() >= next_send {
            ctx.mailbox.send(
                SERVER,
                Message::Hello {
                    node_id: me,
                    role: NodeRole::Endpoint,
                },
            )?;
            next_send = Instant::now() + ctx.interval;
        }
        let wait = next_send.saturating_duration_since(Instant::now()).min(ctx.interval);
        version = air.wait(version, wait);
    }
    Ok(NodeSummary::Endpoint { endpoint, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rollsurf_core::scene::Scenario;

    fn panel() -> PanelState {
        let scene = Scenario::default().build(0).unwrap();
        PanelState::new(&scene.panels[1], MotorSpec::default())
    }

    #[test]
    fn applies_then_acks() {
        let mut p = panel();
        let out = p.handle_set(3, 65, 4);
        assert_eq!(
            out.reply,
            Message::Ack {
                panel_id: 1,
                roll_id: 3,
                epoch: 4,
                actual_mm: 65
            }
        );
        assert_eq!(out.moved, Some((3, 65)));
        assert!((out.motion_seconds - 0.055 / MotorSpec::default().linear_speed()).abs() < 1e-9);
        assert_eq!(p.lengths_mm()[&3], 65);
    }

    #[test]
    fn duplicate_is_acked_without_moving() {
        let mut p = panel();
        p.handle_set(3, 65, 4);
        let again = p.handle_set(3, 65, 4);
        assert!(matches!(again.reply, Message::Ack { actual_mm: 65, .. }));
        assert_eq!(again.moved, None);
        assert_eq!((p.applied, p.duplicates), (1, 1));
    }

    #[test]
    fn stale_and_bounds_are_errors() {
        let mut p = panel();
        p.handle_set(3, 65, 4);
        p.handle_set(2, 70, 6);
        let stale = p.handle_set(3, 80, 5);
        assert!(matches!(
            stale.reply,
            Message::Error {
                code: ErrorCode::Stale,
                ..
            }
        ));
        let oob = p.handle_set(3, 500, 7);
        assert!(matches!(
            oob.reply,
            Message::Error {
                code: ErrorCode::Bounds,
                ..
            }
        ));
        let low = p.handle_set(3, 5, 8);
        assert!(matches!(
            low.reply,
            Message::Error {
                code: ErrorCode::Bounds,
                ..
            }
        ));
        assert_eq!(p.last_epoch(), 6);
        assert_eq!(p.lengths_mm()[&3], 65);
    }

    #[test]
    fn node_names() {
        assert_eq!(node_name(SERVER), "server");
        assert_eq!(node_name(controller_node(0)), "controller 0");
        assert_eq!(node_name(panel_node(3)), "panel 3");
        assert_eq!(node_name(endpoint_node(7)), "endpoint 7");
    }
}
