//! Server side: drives the surface through controllers and collects pushed
//! feedback.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rollsurf_core::control::{m_to_mm, ControlError, Move, Plant, RssiReport};
use rollsurf_core::scene::{EndpointId, LinkId, PanelId, SceneError};
use rollsurf_core::{RollId, Scene};

use crate::codec::{Envelope, Message, NodeId, NodeRole};
use crate::nodes::{endpoint_node, node_name, SERVER};
use crate::transport::Mailbox;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timeouts {
    /// Give up on an unacknowledged command after this long.
    pub ack: Duration,
    /// Give up waiting for one expected feedback report after this long.
    pub feedback: Duration,
    /// Resend cap per command; `None` retries until `ack` expires.
    pub max_retries: Option<u32>,
}

impl Default for Timeouts {
    fn default() -> Self {
        Self {
            ack: Duration::from_secs(5),
            feedback: Duration::from_secs(5),
            max_retries: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PlantStats {
    pub commands: u64,
    pub retries: u64,
    pub duplicate_acks: u64,
    pub stale_feedback: u64,
    pub feedback_used: u64,
}

struct InFlight {
    mv: Move,
    first_sent: Instant,
    last_sent: Instant,
    attempts: u32,
}

pub struct NetworkPlant {
    mailbox: Mailbox,
    scene: Arc<Scene>,
    bounds_mm: BTreeMap<RollId, (u32, u32)>,
    controller_of: BTreeMap<PanelId, NodeId>,
    rx_of: BTreeMap<LinkId, EndpointId>,
    latest: BTreeMap<LinkId, RssiReport>,
    epoch: u64,
    timeouts: Timeouts,
    pub stats: PlantStats,
}

fn transport(e: crate::NetError) -> ControlError {
    ControlError::Transport(e.to_string())
}

impl NetworkPlant {
    pub(crate) fn new(
        mailbox: Mailbox,
        scene: Arc<Scene>,
        controller_of: BTreeMap<PanelId, NodeId>,
        timeouts: Timeouts,
    ) -> Self {
        Self {
            bounds_mm: scene
                .rolls()
                .map(|r| (r.id, (m_to_mm(r.off_length()), m_to_mm(r.max_length()))))
                .collect(),
            rx_of: scene.links.iter().map(|l| (l.id, l.rx)).collect(),
            scene,
            mailbox,
            controller_of,
            latest: BTreeMap::new(),
            epoch: 0,
            timeouts,
            stats: PlantStats::default(),
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub(crate) fn mailbox_mut(&mut self) -> &mut Mailbox {
        &mut self.mailbox
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    fn send_move(&mut self, mv: &Move) -> Result<(), ControlError> {
        let ctrl = self.controller_of[&mv.roll.panel];
        self.mailbox
            .send(
                ctrl,
                Message::SetLength {
                    panel_id: mv.roll.panel,
                    roll_id: mv.roll.index,
                    target_mm: mv.target_mm,
                    epoch: mv.epoch,
                },
            )
            .map_err(transport)
    }

    /// Handles anything that is not an ack. Returns the ack fields if it was one.
    fn absorb(&mut self, env: Envelope) -> Result<Option<(RollId, u64, u32)>, ControlError> {
        match env.msg {
            Message::Ack {
                panel_id,
                roll_id,
                epoch,
                actual_mm,
            } => return Ok(Some((RollId::new(panel_id, roll_id), epoch, actual_mm))),
            Message::RssiFeedback {
                link_id,
                value_dbm,
                epoch,
                seq,
            } => {
                let keep = self.latest.get(&link_id).is_none_or(|r| epoch >= r.epoch);
                if epoch < self.epoch || !keep {
                    self.stats.stale_feedback += 1;
                } else {
                    self.latest.insert(
                        link_id,
                        RssiReport {
                            link_id,
                            value_dbm,
                            epoch,
                            seq,
                        },
                    );
                }
            }
            Message::Hello { .. } => {
                // The first reply was lost; answer again.
                self.mailbox
                    .send(
                        env.src,
                        Message::Hello {
                            node_id: SERVER,
                            role: NodeRole::Server,
                        },
                    )
                    .map_err(transport)?;
            }
            Message::Error { code, detail } => {
                return Err(ControlError::Transport(format!(
                    "{} reported {code}: {detail}",
                    node_name(env.src)
                )))
            }
            Message::SetLength { .. } => {}
        }
        Ok(None)
    }
}

impl Plant for NetworkPlant {
    fn actuate(&mut self, moves: &[Move]) -> Result<(), ControlError> {
        let mut last = self.epoch;
        for m in moves {
            let (lo, hi) = *self
                .bounds_mm
                .get(&m.roll)
                .ok_or(ControlError::Scene(SceneError::UnknownRoll(m.roll)))?;
            if m.target_mm < lo || m.target_mm > hi {
                return Err(ControlError::Rejected {
                    roll: m.roll,
                    reason: format!("target {} mm outside [{lo}, {hi}]", m.target_mm),
                });
            }
            if m.epoch <= last {
                return Err(ControlError::Rejected {
                    roll: m.roll,
                    reason: format!("stale epoch {} <= {}", m.epoch, last),
                });
            }
            last = m.epoch;
        }
        // One outstanding command per panel keeps each panel's epochs in order
        // even when a command has to be resent.
        let mut queues: BTreeMap<PanelId, VecDeque<Move>> = BTreeMap::new();
        for m in moves {
            queues.entry(m.roll.panel).or_default().push_back(*m);
        }
        let mut in_flight: BTreeMap<PanelId, InFlight> = BTreeMap::new();
        let now = Instant::now();
        for (&p, q) in queues.iter_mut() {
            let mv = q.pop_front().expect("non-empty queue");
            self.send_move(&mv)?;
            self.stats.commands += 1;
            in_flight.insert(
                p,
                InFlight {
                    mv,
                    first_sent: now,
                    last_sent: now,
                    attempts: 1,
                },
            );
        }
        let retry = self.mailbox.model().retry_interval();
        while !in_flight.is_empty() {
            let deadline = in_flight
                .values()
                .map(|f| f.last_sent + retry)
                .min()
                .expect("non-empty");
            match self.mailbox.recv_until(deadline).map_err(transport)? {
                Some(env) => {
                    let Some((roll, epoch, actual)) = self.absorb(env)? else {
                        continue;
                    };
                    let matches = in_flight
                        .get(&roll.panel)
                        .is_some_and(|f| f.mv.roll == roll && f.mv.epoch == epoch);
                    if !matches {
                        self.stats.duplicate_acks += 1;
                        continue;
                    }
                    let done = in_flight.remove(&roll.panel).expect("matched");
                    if actual != done.mv.target_mm {
                        return Err(ControlError::Rejected {
                            roll,
                            reason: format!("reached {actual} mm instead of {} mm", done.mv.target_mm),
                        });
                    }
                    if let Some(next) = queues.get_mut(&roll.panel).and_then(|q| q.pop_front()) {
                        self.send_move(&next)?;
                        self.stats.commands += 1;
                        let now = Instant::now();
                        in_flight.insert(
                            roll.panel,
                            InFlight {
                                mv: next,
                                first_sent: now,
                                last_sent: now,
                                attempts: 1,
                            },
                        );
                    }
                }
                None => {
                    let now = Instant::now();
                    let due: Vec<PanelId> = in_flight
                        .iter()
                        .filter(|(_, f)| now >= f.last_sent + retry)
                        .map(|(&p, _)| p)
                        .collect();
                    for p in due {
                        let f = in_flight.get_mut(&p).expect("due panel");
                        let out_of_retries = self.timeouts.max_retries.is_some_and(|m| f.attempts > m);
                        if out_of_retries || now.duration_since(f.first_sent) >= self.timeouts.ack {
                            return Err(ControlError::Transport(format!(
                                "no ack from panel {p} via {} for roll {} epoch {} after {} attempts",
                                node_name(self.controller_of[&p]),
                                f.mv.roll,
                                f.mv.epoch,
                                f.attempts
                            )));
                        }
                        f.attempts += 1;
                        f.last_sent = now;
                        let mv = f.mv;
                        self.stats.retries += 1;
                        self.send_move(&mv)?;
                    }
                }
            }
        }
        self.epoch = last;
        Ok(())
    }

    fn collect(&mut self, epoch: u64, links: &[LinkId]) -> Result<Vec<RssiReport>, ControlError> {
        let mut out = Vec::with_capacity(links.len());
        for &link in links {
            let deadline = Instant::now() + self.timeouts.feedback;
            loop {
                if let Some(r) = self.latest.get(&link) {
                    if r.epoch == self.epoch {
                        out.push(*r);
                        self.stats.feedback_used += 1;
                        break;
                    }
                }
                match self.mailbox.recv_until(deadline).map_err(transport)? {
                    Some(env) => {
                        if self.absorb(env)?.is_some() {
                            self.stats.duplicate_acks += 1;
                        }
                    }
                    None => {
                        let rx = self.rx_of.get(&link).copied().unwrap_or_default();
                        return Err(ControlError::FeedbackTimeout {
                            link,
                            node: format!("{} waiting for epoch {epoch}", node_name(endpoint_node(rx))),
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{LinkModel, Network, TransportKind};
    use rollsurf_core::scene::Scenario;

    #[test]
    fn silent_endpoint_times_out_by_name() {
        let scene = Arc::new(Scenario::default().build(1).unwrap());
        let net = Network::new(TransportKind::InProcess, LinkModel::default(), None).unwrap();
        let server = net.join(SERVER, NodeRole::Server).unwrap();
        let timeouts = Timeouts {
            feedback: Duration::from_millis(50),
            ..Timeouts::default()
        };
        let ctrl = scene
            .panels
            .iter()
            .map(|p| (p.id, crate::nodes::controller_node(0)))
            .collect();
        let mut plant = NetworkPlant::new(server, scene.clone(), ctrl, timeouts);
        match plant.collect(0, &[0]) {
            Err(ControlError::FeedbackTimeout { link, node }) => {
                assert_eq!(link, 0);
                assert!(node.starts_with(&format!("endpoint {}", scene.links[0].rx)), "{node}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_bounds_is_rejected_before_sending() {
        let scene = Arc::new(Scenario::default().build(1).unwrap());
        let net = Network::new(TransportKind::InProcess, LinkModel::default(), None).unwrap();
        let server = net.join(SERVER, NodeRole::Server).unwrap();
        let ctrl = scene
            .panels
            .iter()
            .map(|p| (p.id, crate::nodes::controller_node(0)))
            .collect();
        let mut plant = NetworkPlant::new(server, scene, ctrl, Timeouts::default());
        let mv = Move {
            roll: RollId::new(0, 0),
            target_mm: 900,
            epoch: 1,
        };
        assert!(matches!(plant.actuate(&[mv]), Err(ControlError::Rejected { .. })));
        assert_eq!(net.totals().sent, 0);
    }
}
