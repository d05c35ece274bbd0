//! Roll-length optimization from RSSI feedback.

pub mod cache;
pub mod measure;
pub mod oracle;
pub mod plant;
pub mod selection;
pub mod state_space;
pub mod sweep;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::ActuationError;
use crate::scene::{LinkId, RollId, SceneError};
use crate::MotorSpec;

pub use cache::{cache_key, cache_validate, scene_links, CacheCheck, CacheEntry, ConfigCache, LinkGeometry};
pub use measure::{exact_rssi_dbm, measure_rssi, reading_at_epoch, MeasurementPolicy, RssiReport};
pub use oracle::{brute_force_oracle, linear_objective, OracleResult, ORACLE_LIMIT};
pub use plant::{Move, Plant, SimPlant};
pub use selection::{selection_rule, selection_rule_with_headroom, Candidate};
pub use state_space::{joint_state_space, m_to_mm, mm_to_m, state_space_for, Band, LengthStateSpace};
pub use sweep::{
    enumerate_sweep, group_sweep, run_enumerate, run_group, run_sim, run_with_plant, Algorithm, Event, RollStatus,
    Session, SweepOutcome, TestLedger,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Actuation(#[from] ActuationError),
    #[error("invalid parameter: {0}")]
    BadParameter(&'static str),
    #[error("scene has no links")]
    NoLinks,
    #[error("scene has no panels")]
    NoPanels,
    #[error("no feedback for link {link} at epoch {epoch}")]
    MissingReport { link: LinkId, epoch: u64 },
    #[error("feedback timeout waiting for link {link} ({node})")]
    FeedbackTimeout { link: LinkId, node: String },
    #[error("roll {roll} rejected move: {reason}")]
    Rejected { roll: RollId, reason: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("search space of {size:.3e} configurations exceeds limit {limit}")]
    SearchSpaceTooLarge { size: f64, limit: u64 },
    #[error("cache: {0}")]
    Cache(String),
}

/// Everything a control run needs besides the scene.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub policy: MeasurementPolicy,
    pub motor: MotorSpec,
    /// Seeds feedback noise and group sampling.
    pub seed: u64,
    /// Replaces the band-table state space when set.
    pub states_mm: Option<Vec<u32>>,
}

impl ControlParams {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            policy: MeasurementPolicy::noiseless(),
            seed,
            ..Self::default()
        }
    }
}
