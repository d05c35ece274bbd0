//! The physical surface shared by panel and endpoint nodes.
//!
//! Panels write roll lengths as they finish moving; endpoints read them to
//! produce feedback. Epochs are issued contiguously by the server, so the
//! watermark (highest epoch with every earlier epoch applied) tells an
//! endpoint when the surface it sees is a complete configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rollsurf_core::control::m_to_mm;
use rollsurf_core::{RollId, Scene};

#[derive(Debug, Clone, PartialEq)]
pub struct AirSnapshot {
    pub watermark: u64,
    /// No applied epoch above the watermark.
    pub settled: bool,
    pub lengths_mm: BTreeMap<RollId, u32>,
}

#[derive(Debug)]
struct State {
    lengths_mm: BTreeMap<RollId, u32>,
    watermark: u64,
    ahead: BTreeSet<u64>,
    moves: u64,
    version: u64,
}

#[derive(Debug)]
pub struct Air {
    state: Mutex<State>,
    changed: Condvar,
}

impl Air {
    pub fn new(scene: &Scene) -> Self {
        Self {
            state: Mutex::new(State {
                lengths_mm: scene.rolls().map(|r| (r.id, m_to_mm(r.exposed_length))).collect(),
                watermark: 0,
                ahead: BTreeSet::new(),
                moves: 0,
                version: 0,
            }),
            changed: Condvar::new(),
        }
    }

    pub fn apply(&self, roll: RollId, mm: u32, epoch: u64) {
        let mut s = self.state.lock().expect("air lock");
        s.lengths_mm.insert(roll, mm);
        s.moves += 1;
        if epoch == s.watermark + 1 {
            s.watermark = epoch;
            loop {
                let next = s.watermark + 1;
                if !s.ahead.remove(&next) {
                    break;
                }
                s.watermark = next;
            }
        } else if epoch > s.watermark {
            s.ahead.insert(epoch);
        }
        s.version += 1;
        self.changed.notify_all();
    }

    pub fn snapshot(&self) -> AirSnapshot {
        let s = self.state.lock().expect("air lock");
        AirSnapshot {
            watermark: s.watermark,
            settled: s.ahead.is_empty(),
            lengths_mm: s.lengths_mm.clone(),
        }
    }

    /// Blocks until the surface changes after `version` or `timeout` passes.
    /// Returns the current version.
    pub fn wait(&self, version: u64, timeout: Duration) -> u64 {
        let s = self.state.lock().expect("air lock");
        let (s, _) = self
            .changed
            .wait_timeout_while(s, timeout, |s| s.version == version)
            .expect("air lock");
        s.version
    }

    pub fn version(&self) -> u64 {
        self.state.lock().expect("air lock").version
    }

    /// Total roll moves applied so far.
    pub fn moves(&self) -> u64 {
        self.state.lock().expect("air lock").moves
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rollsurf_core::scene::Scenario;

    #[test]
    fn watermark_waits_for_gaps() {
        let scene = Scenario::default().build(0).unwrap();
        let air = Air::new(&scene);
        let (r, q) = (RollId::new(0, 0), RollId::new(1, 0));
        air.apply(q, 50, 2);
        let s = air.snapshot();
        assert_eq!((s.watermark, s.settled), (0, false));
        air.apply(r, 60, 1);
        let s = air.snapshot();
        assert_eq!((s.watermark, s.settled), (2, true));
        assert_eq!((s.lengths_mm[&r], s.lengths_mm[&q]), (60, 50));
        assert_eq!(air.moves(), 2);
    }
}
