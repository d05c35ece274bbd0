//! Per-roll enumeration and group sweeping.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::measure::MeasurementPolicy;
use super::plant::{Move, Plant, SimPlant};
use super::selection::{best_harmless, selection_rule_with_headroom, Candidate};
use super::state_space::{joint_state_space, m_to_mm, mm_to_m};
use super::{ControlError, ControlParams};
use crate::actuation::ActuationLog;
use crate::scene::{LinkId, PanelId, RollId, Scene, SurfaceConfig};
use crate::{seed, MotorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RollStatus {
    Untested,
    TestedOff,
    TestedSet(u32),
}

/// Test status of every roll.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TestLedger {
    pub status: BTreeMap<RollId, RollStatus>,
}

impl TestLedger {
    pub fn new(rolls: &[RollId]) -> Self {
        Self {
            status: rolls.iter().map(|&r| (r, RollStatus::Untested)).collect(),
        }
    }

    pub fn untested(&self) -> usize {
        self.status.values().filter(|s| **s == RollStatus::Untested).count()
    }

    pub fn mark(&mut self, roll: RollId, status: RollStatus) {
        self.status.insert(roll, status);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Event {
    GroupFormed {
        rolls: Vec<RollId>,
    },
    GroupGain {
        state_mm: u32,
    },
    /// A group gained but no single member did on its own.
    ConstructiveGroupEffect {
        rolls: Vec<RollId>,
        chosen: Option<(RollId, u32)>,
    },
    StaleReport {
        link: LinkId,
        epoch: u64,
        expected: u64,
    },
}

/// Drives a [`Plant`] and keeps the controller's view of the surface, the
/// timing log and the measurement history.
pub struct Session<P: Plant> {
    plant: P,
    link_ids: Vec<LinkId>,
    rolls: Vec<RollId>,
    off_mm: BTreeMap<RollId, u32>,
    lengths_mm: BTreeMap<RollId, u32>,
    states_mm: Vec<u32>,
    epoch: u64,
    motor: MotorSpec,
    policy: MeasurementPolicy,
    readings: HashMap<Vec<u32>, Vec<f64>>,
    pub log: ActuationLog,
    pub events: Vec<Event>,
    /// `(epoch, per-link reading)` for every fresh measurement.
    pub history: Vec<(u64, Vec<f64>)>,
}

impl<P: Plant> Session<P> {
    pub fn new(scene: &Scene, plant: P, params: &ControlParams) -> Result<Self, ControlError> {
        params.policy.validate()?;
        params.motor.validate()?;
        if scene.links.is_empty() {
            return Err(ControlError::NoLinks);
        }
        if scene.panels.is_empty() {
            return Err(ControlError::NoPanels);
        }
        let mut rolls = scene.roll_ids();
        rolls.sort();
        let off_mm: BTreeMap<_, _> = scene.rolls().map(|r| (r.id, m_to_mm(r.off_length()))).collect();
        let min_off = off_mm.values().copied().max().unwrap_or(0);
        let max_len = scene.rolls().map(|r| m_to_mm(r.max_length())).min().unwrap_or(0);
        let states_mm = match &params.states_mm {
            Some(s) => {
                let mut s = s.clone();
                s.sort_unstable();
                s.dedup();
                s.retain(|&l| l > min_off && l <= max_len);
                s
            }
            None => {
                let freqs: Vec<_> = scene.links.iter().map(|l| l.frequency).collect();
                joint_state_space(&freqs, min_off, max_len).lengths_mm
            }
        };
        if states_mm.is_empty() {
            return Err(ControlError::BadParameter("empty length state space"));
        }
        Ok(Self {
            plant,
            link_ids: scene.links.iter().map(|l| l.id).collect(),
            lengths_mm: scene.rolls().map(|r| (r.id, m_to_mm(r.exposed_length))).collect(),
            rolls,
            off_mm,
            states_mm,
            epoch: 0,
            motor: params.motor,
            policy: params.policy,
            readings: HashMap::new(),
            log: ActuationLog::default(),
            events: Vec::new(),
            history: Vec::new(),
        })
    }

    pub fn plant(&self) -> &P {
        &self.plant
    }

    pub fn into_plant(self) -> P {
        self.plant
    }

    pub fn states_mm(&self) -> &[u32] {
        &self.states_mm
    }

    pub fn rolls(&self) -> &[RollId] {
        &self.rolls
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn length_mm(&self, roll: RollId) -> u32 {
        self.lengths_mm[&roll]
    }

    pub fn off_mm(&self, roll: RollId) -> u32 {
        self.off_mm[&roll]
    }

    pub fn config(&self) -> SurfaceConfig {
        SurfaceConfig {
            lengths: self.lengths_mm.iter().map(|(&r, &mm)| (r, mm_to_m(mm))).collect(),
            epoch: self.epoch,
        }
    }

    /// Moves rolls simultaneously. Each changed roll gets its own epoch.
    pub fn move_to(&mut self, targets: &[(RollId, u32)]) -> Result<(), ControlError> {
        let mut moves = Vec::new();
        let mut deltas = Vec::new();
        for &(roll, target) in targets {
            let current = *self
                .lengths_mm
                .get(&roll)
                .ok_or(ControlError::Scene(crate::scene::SceneError::UnknownRoll(roll)))?;
            if current == target {
                continue;
            }
            self.epoch += 1;
            moves.push(Move {
                roll,
                target_mm: target,
                epoch: self.epoch,
            });
            deltas.push((roll, mm_to_m(target) - mm_to_m(current)));
        }
        if moves.is_empty() {
            return Ok(());
        }
        self.plant.actuate(&moves)?;
        self.log.record_parallel(&self.motor, &deltas)?;
        for m in &moves {
            self.lengths_mm.insert(m.roll, m.target_mm);
        }
        Ok(())
    }

    /// Per-link reading of the current configuration. A configuration that
    /// was already measured is not measured again.
    pub fn measure(&mut self) -> Result<Vec<f64>, ControlError> {
        let key: Vec<u32> = self.lengths_mm.values().copied().collect();
        if let Some(v) = self.readings.get(&key) {
            return Ok(v.clone());
        }
        let reports = self.plant.collect(self.epoch, &self.link_ids)?;
        let mut values: Vec<Option<f64>> = vec![None; self.link_ids.len()];
        for r in reports {
            if r.epoch != self.epoch {
                self.events.push(Event::StaleReport {
                    link: r.link_id,
                    epoch: r.epoch,
                    expected: self.epoch,
                });
                continue;
            }
            if let Some(i) = self.link_ids.iter().position(|&l| l == r.link_id) {
                values[i] = Some(r.value_dbm);
            }
        }
        let values = values
            .into_iter()
            .zip(&self.link_ids)
            .map(|(v, &link)| {
                v.ok_or(ControlError::MissingReport {
                    link,
                    epoch: self.epoch,
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        self.log.record_dwell(self.policy.dwell_s);
        self.history.push((self.epoch, values.clone()));
        self.readings.insert(key, values.clone());
        Ok(values)
    }

    fn all_off_targets(&self) -> Vec<(RollId, u32)> {
        self.rolls.iter().map(|&r| (r, self.off_mm[&r])).collect()
    }

    /// Sweeps one roll through every state and leaves it at the chosen state
    /// or off. Returns the choice and every candidate.
    fn single_sweep(
        &mut self,
        roll: RollId,
        base: &[f64],
        all_off: &[f64],
    ) -> Result<(Option<u32>, Vec<Candidate>), ControlError> {
        let mut candidates = Vec::with_capacity(self.states_mm.len());
        for s in self.states_mm.clone() {
            self.move_to(&[(roll, s)])?;
            let m = self.measure()?;
            candidates.push(Candidate::new(s, m.iter().zip(base).map(|(a, b)| a - b).collect()));
        }
        let headroom: Vec<f64> = base.iter().zip(all_off).map(|(b, o)| b - o).collect();
        let choice = selection_rule_with_headroom(&candidates, self.policy.noise_floor_margin_db, &headroom)
            .map(|i| candidates[i].length_mm);
        self.move_to(&[(roll, choice.unwrap_or(self.off_mm[&roll]))])?;
        Ok((choice, candidates))
    }
}

/// Everything a finished sweep produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub config: SurfaceConfig,
    pub log: ActuationLog,
    pub ledger: TestLedger,
    pub events: Vec<Event>,
    /// Reading with every roll off.
    pub off_dbm: Vec<f64>,
    /// Reading of the final configuration.
    pub final_dbm: Vec<f64>,
    pub groups: usize,
    /// Roll decisions in the order they were made.
    pub decisions: Vec<(RollId, Option<u32>)>,
}

impl SweepOutcome {
    pub fn gains_db(&self) -> Vec<f64> {
        self.final_dbm.iter().zip(&self.off_dbm).map(|(a, b)| a - b).collect()
    }

    pub fn extended(&self) -> Vec<(RollId, f64)> {
        self.ledger
            .status
            .iter()
            .filter_map(|(&r, s)| match s {
                RollStatus::TestedSet(mm) => Some((r, mm_to_m(*mm))),
                _ => None,
            })
            .collect()
    }
}

fn finish<P: Plant>(
    mut s: Session<P>,
    ledger: TestLedger,
    off_dbm: Vec<f64>,
    groups: usize,
    decisions: Vec<(RollId, Option<u32>)>,
) -> Result<(SweepOutcome, P), ControlError> {
    let final_dbm = s.measure()?;
    let config = s.config();
    let outcome = SweepOutcome {
        config,
        log: s.log.clone(),
        ledger,
        events: std::mem::take(&mut s.events),
        off_dbm,
        final_dbm,
        groups,
        decisions,
    };
    Ok((outcome, s.into_plant()))
}

/// Visits every roll in `(panel, index)` order, sweeping it and keeping the
/// selected state.
pub fn run_enumerate<P: Plant>(mut s: Session<P>) -> Result<(SweepOutcome, P), ControlError> {
    let targets = s.all_off_targets();
    s.move_to(&targets)?;
    let off = s.measure()?;
    let mut ledger = TestLedger::new(&s.rolls);
    let mut decisions = Vec::new();
    for roll in s.rolls.clone() {
        let base = s.measure()?;
        let (choice, _) = s.single_sweep(roll, &base, &off)?;
        ledger.mark(roll, choice.map_or(RollStatus::TestedOff, RollStatus::TestedSet));
        decisions.push((roll, choice));
    }
    finish(s, ledger, off, 0, decisions)
}

/// Group testing: one untested roll per panel is swept together; only a
/// group that shows a gain is broken down roll by roll.
pub fn run_group<P: Plant>(mut s: Session<P>, run_seed: u64) -> Result<(SweepOutcome, P), ControlError> {
    let targets = s.all_off_targets();
    s.move_to(&targets)?;
    let off = s.measure()?;
    let margin = s.policy.noise_floor_margin_db;
    let mut ledger = TestLedger::new(&s.rolls);
    let mut pool: BTreeMap<PanelId, Vec<RollId>> = BTreeMap::new();
    for &r in &s.rolls {
        pool.entry(r.panel).or_default().push(r);
    }
    let mut rng = seed::stream(run_seed, &[0x6772]);
    let mut groups = 0;
    let mut decisions = Vec::new();
    while pool.values().any(|v| !v.is_empty()) {
        let group: Vec<RollId> = pool
            .values_mut()
            .filter(|v| !v.is_empty())
            .map(|v| {
                let i = rng.random_range(0..v.len());
                v.remove(i)
            })
            .collect();
        groups += 1;
        s.events.push(Event::GroupFormed { rolls: group.clone() });
        let base = s.measure()?;

        if group.len() == 1 {
            let roll = group[0];
            let (choice, _) = s.single_sweep(roll, &base, &off)?;
            ledger.mark(roll, choice.map_or(RollStatus::TestedOff, RollStatus::TestedSet));
            decisions.push((roll, choice));
            continue;
        }

        let mut detected = false;
        for st in s.states_mm.clone() {
            let moves: Vec<_> = group.iter().map(|&r| (r, st)).collect();
            s.move_to(&moves)?;
            let m = s.measure()?;
            if m.iter().zip(&base).any(|(a, b)| a - b > margin) {
                s.events.push(Event::GroupGain { state_mm: st });
                detected = true;
                break;
            }
        }
        let retract: Vec<_> = group.iter().map(|&r| (r, s.off_mm[&r])).collect();
        s.move_to(&retract)?;

        if !detected {
            for &r in &group {
                ledger.mark(r, RollStatus::TestedOff);
                decisions.push((r, None));
            }
            continue;
        }

        let mut accepted = false;
        let mut tried: Vec<(RollId, Vec<Candidate>)> = Vec::new();
        for (i, &roll) in group.iter().enumerate() {
            let (choice, cands) = s.single_sweep(roll, &base, &off)?;
            if let Some(mm) = choice {
                ledger.mark(roll, RollStatus::TestedSet(mm));
                decisions.push((roll, Some(mm)));
                for &rest in &group[i + 1..] {
                    pool.entry(rest.panel).or_default().push(rest);
                }
                accepted = true;
                break;
            }
            ledger.mark(roll, RollStatus::TestedOff);
            tried.push((roll, cands));
        }
        if !accepted {
            let headroom: Vec<f64> = base.iter().zip(&off).map(|(b, o)| b - o).collect();
            let flat: Vec<(RollId, Candidate)> = tried
                .iter()
                .flat_map(|(r, cs)| cs.iter().map(move |c| (*r, c.clone())))
                .collect();
            let cands: Vec<Candidate> = flat.iter().map(|(_, c)| c.clone()).collect();
            let chosen = best_harmless(&cands, margin, &headroom).map(|i| (flat[i].0, flat[i].1.length_mm));
            if let Some((roll, mm)) = chosen {
                s.move_to(&[(roll, mm)])?;
                ledger.mark(roll, RollStatus::TestedSet(mm));
            }
            for &r in &group {
                decisions.push((r, chosen.filter(|c| c.0 == r).map(|c| c.1)));
            }
            s.events.push(Event::ConstructiveGroupEffect {
                rolls: group.clone(),
                chosen,
            });
        }
    }
    finish(s, ledger, off, groups, decisions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Enumerate,
    Group,
}

impl std::str::FromStr for Algorithm {
    type Err = ControlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "enumerate" => Ok(Algorithm::Enumerate),
            "group" => Ok(Algorithm::Group),
            _ => Err(ControlError::BadParameter("algorithm must be enumerate or group")),
        }
    }
}

/// Runs `algorithm` against an arbitrary plant.
pub fn run_with_plant<P: Plant>(
    algorithm: Algorithm,
    scene: &Scene,
    plant: P,
    params: &ControlParams,
) -> Result<(SweepOutcome, P), ControlError> {
    let session = Session::new(scene, plant, params)?;
    match algorithm {
        Algorithm::Enumerate => run_enumerate(session),
        Algorithm::Group => run_group(session, params.seed),
    }
}

pub fn run_sim(algorithm: Algorithm, scene: &Scene, params: &ControlParams) -> Result<SweepOutcome, ControlError> {
    let plant = SimPlant::new(scene, params.policy, params.seed);
    run_with_plant(algorithm, scene, plant, params).map(|r| r.0)
}

/// Per-roll enumeration on the in-process plant.
pub fn enumerate_sweep(scene: &Scene, params: &ControlParams) -> Result<SweepOutcome, ControlError> {
    run_sim(Algorithm::Enumerate, scene, params)
}

/// Group sweep on the in-process plant.
pub fn group_sweep(scene: &Scene, params: &ControlParams) -> Result<SweepOutcome, ControlError> {
    run_sim(Algorithm::Group, scene, params)
}
