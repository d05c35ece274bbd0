//! The thing being controlled: moves rolls, returns feedback.

use std::collections::BTreeMap;

use super::measure::{reading_at_epoch, MeasurementPolicy, RssiReport};
use super::state_space::{m_to_mm, mm_to_m};
use super::ControlError;
use crate::scene::{LinkId, RollId, Scene};

/// One roll move, tagged with the configuration epoch it produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Move {
    pub roll: RollId,
    pub target_mm: u32,
    pub epoch: u64,
}

pub trait Plant {
    /// Applies moves in order; epochs are strictly increasing.
    fn actuate(&mut self, moves: &[Move]) -> Result<(), ControlError>;

    /// One report per link, measured once the surface has reached `epoch`.
    fn collect(&mut self, epoch: u64, links: &[LinkId]) -> Result<Vec<RssiReport>, ControlError>;
}

/// In-process plant: a private copy of the scene plus the seeded reading model.
#[derive(Debug, Clone)]
pub struct SimPlant {
    scene: Scene,
    lengths_mm: BTreeMap<RollId, u32>,
    bounds_mm: BTreeMap<RollId, (u32, u32)>,
    epoch: u64,
    policy: MeasurementPolicy,
    run_seed: u64,
    seq: u64,
}

impl SimPlant {
    pub fn new(scene: &Scene, policy: MeasurementPolicy, run_seed: u64) -> Self {
        Self {
            lengths_mm: scene.rolls().map(|r| (r.id, m_to_mm(r.exposed_length))).collect(),
            bounds_mm: scene
                .rolls()
                .map(|r| (r.id, (m_to_mm(r.off_length()), m_to_mm(r.max_length()))))
                .collect(),
            scene: scene.clone(),
            epoch: 0,
            policy,
            run_seed,
            seq: 0,
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn lengths_mm(&self) -> &BTreeMap<RollId, u32> {
        &self.lengths_mm
    }
}

impl Plant for SimPlant {
    fn actuate(&mut self, moves: &[Move]) -> Result<(), ControlError> {
        for m in moves {
            let (lo, hi) = *self
                .bounds_mm
                .get(&m.roll)
                .ok_or(ControlError::Scene(crate::scene::SceneError::UnknownRoll(m.roll)))?;
            if m.target_mm < lo || m.target_mm > hi {
                return Err(ControlError::Rejected {
                    roll: m.roll,
                    reason: format!("target {} mm outside [{lo}, {hi}]", m.target_mm),
                });
            }
            if m.epoch <= self.epoch {
                return Err(ControlError::Rejected {
                    roll: m.roll,
                    reason: format!("stale epoch {} <= {}", m.epoch, self.epoch),
                });
            }
            self.lengths_mm.insert(m.roll, m.target_mm);
            self.epoch = m.epoch;
        }
        Ok(())
    }

    fn collect(&mut self, _epoch: u64, links: &[LinkId]) -> Result<Vec<RssiReport>, ControlError> {
        let mut out = Vec::with_capacity(links.len());
        for &id in links {
            let link = self.scene.link(id)?;
            let lengths = &self.lengths_mm;
            let value = reading_at_epoch(
                &self.scene,
                link,
                |r| mm_to_m(lengths[&r]),
                &self.policy,
                self.run_seed,
                self.epoch,
            )?;
            self.seq += 1;
            out.push(RssiReport {
                link_id: id,
                value_dbm: value,
                epoch: self.epoch,
                seq: self.seq,
            });
        }
        Ok(out)
    }
}
