//! Surface geometry and configuration bookkeeping.
//!
//! A [`Scene`] is the immutable layout of panels, rolls, strips, endpoints and
//! links. The only mutable state is each roll's exposed length, which is
//! changed atomically through [`Scene::apply_config`].

mod file;
mod presets;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::em::{self, EmError};
use crate::{seed, Frequency, Position, ResonanceModel, ScatterModel, Vec3};

pub use file::{EndpointEntry, Layout, LinkEntry, PanelEntry, SceneFile};
pub use presets::{Preset, Scenario, PANEL_GAP};

pub type PanelId = u32;
pub type EndpointId = u32;
pub type LinkId = u32;

/// Rolls per panel in the default template.
pub const ROLLS_PER_PANEL: usize = 9;
/// Strips per roll in the default template.
pub const STRIPS_PER_ROLL: usize = 14;
/// Side of the square panel frame (m).
pub const PANEL_EXTENT: f64 = 0.45;
/// Usable width of one roll (m).
pub const ROLL_WIDTH: f64 = 0.40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripSpec {
    pub width: f64,
    pub max_length: f64,
    pub spacing: f64,
}

impl Default for StripSpec {
    fn default() -> Self {
        Self {
            width: 0.006,
            max_length: 0.16,
            spacing: 0.03,
        }
    }
}

/// Roll identifier: panel plus roll index on that panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RollId {
    pub panel: PanelId,
    pub index: u32,
}

impl RollId {
    pub fn new(panel: PanelId, index: u32) -> Self {
        Self { panel, index }
    }
}

impl fmt::Display for RollId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}r{}", self.panel, self.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roll {
    pub id: RollId,
    /// Top of the roll, on the rod axis.
    pub axis_origin: Position,
    /// Unit vector along the rod.
    pub rod_direction: Vec3,
    /// Unit vector in which strips extend when unrolled.
    pub orientation: Vec3,
    /// Strip positions along the rod, measured from `axis_origin`.
    pub strip_offsets: Vec<f64>,
    pub exposed_length: f64,
    pub length_bounds: (f64, f64),
}

impl Roll {
    pub fn off_length(&self) -> f64 {
        self.length_bounds.0
    }

    pub fn max_length(&self) -> f64 {
        self.length_bounds.1
    }

    pub fn contains(&self, length: f64) -> bool {
        length.is_finite() && length >= self.length_bounds.0 && length <= self.length_bounds.1
    }

    /// Radiating centre of every strip for the given exposed length.
    ///
    /// The centre sits at the midpoint of the exposed part, so changing the
    /// length moves the element and therefore its path phase.
    pub fn element_positions_at(&self, exposed_length: f64) -> impl Iterator<Item = (usize, Position)> + '_ {
        let drop = self.orientation * (exposed_length / 2.0);
        self.strip_offsets
            .iter()
            .enumerate()
            .map(move |(i, &off)| (i, self.axis_origin + self.rod_direction * off + drop))
    }

    /// `(strip index, centre, exposed length)` for the roll's current state.
    pub fn element_positions(&self) -> Vec<(usize, Position, f64)> {
        self.element_positions_at(self.exposed_length)
            .map(|(i, p)| (i, p, self.exposed_length))
            .collect()
    }
}

/// Panel placement: origin is the top-left corner of the frame, yaw rotates
/// the frame about the vertical axis. Yaw 0 puts the rods along +x with the
/// panel facing +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelFrame {
    pub origin: Position,
    pub yaw_deg: f64,
}

impl PanelFrame {
    pub fn new(origin: Position, yaw_deg: f64) -> Self {
        Self { origin, yaw_deg }
    }

    pub fn rod_direction(&self) -> Vec3 {
        let yaw = self.yaw_deg.to_radians();
        Vec3::new(yaw.cos(), yaw.sin(), 0.0)
    }

    /// Outward normal of the reflecting face.
    pub fn normal(&self) -> Vec3 {
        let yaw = self.yaw_deg.to_radians();
        Vec3::new(-yaw.sin(), yaw.cos(), 0.0)
    }

    /// Centre of the frame face.
    pub fn center(&self) -> Position {
        self.origin + self.rod_direction() * (PANEL_EXTENT / 2.0) + Vec3::new(0.0, 0.0, -PANEL_EXTENT / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub id: PanelId,
    pub frame: PanelFrame,
    pub rolls: Vec<Roll>,
}

impl Panel {
    pub fn element_count(&self) -> usize {
        self.rolls.iter().map(|r| r.strip_offsets.len()).sum()
    }
}

/// Builds the default 9-roll, 14-strip panel with every roll rolled up.
pub fn build_default_panel(id: PanelId, frame: PanelFrame, strip: &StripSpec, off_length: f64) -> Panel {
    let rod = frame.rod_direction();
    let down = Vec3::new(0.0, 0.0, -1.0);
    // Rods are spread so the lowest fully unrolled strip ends at the frame bottom.
    let rod_pitch = (PANEL_EXTENT - strip.max_length) / (ROLLS_PER_PANEL as f64 - 1.0);
    let used = (STRIPS_PER_ROLL as f64 - 1.0) * strip.spacing;
    let margin = (PANEL_EXTENT - used) / 2.0;
    let offsets: Vec<f64> = (0..STRIPS_PER_ROLL)
        .map(|j| margin + j as f64 * strip.spacing)
        .collect();
    let rolls = (0..ROLLS_PER_PANEL)
        .map(|i| Roll {
            id: RollId::new(id, i as u32),
            axis_origin: frame.origin + down * (i as f64 * rod_pitch),
            rod_direction: rod,
            orientation: down,
            strip_offsets: offsets.clone(),
            exposed_length: off_length,
            length_bounds: (off_length, strip.max_length),
        })
        .collect();
    Panel { id, frame, rolls }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Transmitter,
    Receiver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackTransport {
    #[default]
    InProcess,
    Socket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub id: EndpointId,
    pub position: Position,
    pub role: Role,
    #[serde(default)]
    pub feedback_transport: FeedbackTransport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub tx: EndpointId,
    pub rx: EndpointId,
    pub frequency: Frequency,
    pub tx_power_dbm: f64,
}

impl Link {
    /// Same link with transmitter and receiver exchanged.
    pub fn reversed(&self) -> Self {
        Self {
            tx: self.rx,
            rx: self.tx,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("roll {0} is not part of the scene")]
    UnknownRoll(RollId),
    #[error("configuration does not cover roll {0}")]
    MissingRoll(RollId),
    #[error("roll {roll}: length {length} m outside [{min}, {max}]")]
    LengthOutOfBounds {
        roll: RollId,
        length: f64,
        min: f64,
        max: f64,
    },
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(EndpointId),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("scene invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("scene file: {0}")]
    Format(String),
    #[error(transparent)]
    Em(#[from] EmError),
}

/// One failed scene invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicatePanel(PanelId),
    DuplicateRoll(RollId),
    DuplicateEndpoint(EndpointId),
    DuplicateLink(LinkId),
    LinkUnknownEndpoint { link: LinkId, endpoint: EndpointId },
    LinkSelfLoop(LinkId),
    LinkRole { link: LinkId, endpoint: EndpointId },
    LengthOutOfBounds { roll: RollId, length: f64 },
    BadBounds(RollId),
    StripsExceedRoll { roll: RollId, extent: f64 },
    NonFinitePosition(String),
    BadResonance(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicatePanel(id) => write!(f, "duplicate panel id {id}"),
            Violation::DuplicateRoll(id) => write!(f, "duplicate roll id {id}"),
            Violation::DuplicateEndpoint(id) => write!(f, "duplicate endpoint id {id}"),
            Violation::DuplicateLink(id) => write!(f, "duplicate link id {id}"),
            Violation::LinkUnknownEndpoint { link, endpoint } => {
                write!(f, "link {link} references unknown endpoint {endpoint}")
            }
            Violation::LinkSelfLoop(id) => write!(f, "link {id} has tx == rx"),
            Violation::LinkRole { link, endpoint } => {
                write!(f, "link {link}: endpoint {endpoint} has the wrong role")
            }
            Violation::LengthOutOfBounds { roll, length } => {
                write!(f, "roll {roll} exposed length {length} m out of bounds")
            }
            Violation::BadBounds(id) => write!(f, "roll {id} has invalid length bounds"),
            Violation::StripsExceedRoll { roll, extent } => {
                write!(f, "roll {roll} strips span {extent} m > roll width {ROLL_WIDTH} m")
            }
            Violation::NonFinitePosition(what) => write!(f, "non-finite position in {what}"),
            Violation::BadResonance(msg) => write!(f, "resonance model: {msg}"),
        }
    }
}

/// Exposed length of every roll, tagged with a configuration epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SurfaceConfig {
    pub lengths: BTreeMap<RollId, f64>,
    pub epoch: u64,
}

impl SurfaceConfig {
    pub fn length(&self, roll: RollId) -> Option<f64> {
        self.lengths.get(&roll).copied()
    }

    pub fn set(&mut self, roll: RollId, length: f64) {
        self.lengths.insert(roll, length);
    }

    /// Rolls strictly longer than `off_length`.
    pub fn extended(&self, off_length: f64) -> impl Iterator<Item = (RollId, f64)> + '_ {
        self.lengths
            .iter()
            .filter(move |(_, &l)| l > off_length)
            .map(|(&r, &l)| (r, l))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub panels: Vec<Panel>,
    pub endpoints: Vec<Endpoint>,
    pub links: Vec<Link>,
    pub multipath_seed: u64,
    /// Standard deviation of the log-normal direct-path factor (dB).
    pub multipath_sigma_db: f64,
    pub resonance: ResonanceModel,
    pub scatter: ScatterModel,
    pub strip: StripSpec,
    pub epoch: u64,
}

impl Scene {
    pub fn new(panels: Vec<Panel>, endpoints: Vec<Endpoint>, links: Vec<Link>, multipath_seed: u64) -> Self {
        Self {
            panels,
            endpoints,
            links,
            multipath_seed,
            multipath_sigma_db: 3.0,
            resonance: ResonanceModel::default(),
            scatter: ScatterModel::default(),
            strip: StripSpec::default(),
            epoch: 0,
        }
    }

    pub fn rolls(&self) -> impl Iterator<Item = &Roll> {
        self.panels.iter().flat_map(|p| p.rolls.iter())
    }

    pub fn roll(&self, id: RollId) -> Option<&Roll> {
        self.panels
            .iter()
            .find(|p| p.id == id.panel)
            .and_then(|p| p.rolls.iter().find(|r| r.id == id))
    }

    pub fn roll_ids(&self) -> Vec<RollId> {
        self.rolls().map(|r| r.id).collect()
    }

    pub fn element_count(&self) -> usize {
        self.panels.iter().map(Panel::element_count).sum()
    }

    pub fn endpoint(&self, id: EndpointId) -> Result<&Endpoint, SceneError> {
        self.endpoints
            .iter()
            .find(|e| e.id == id)
            .ok_or(SceneError::UnknownEndpoint(id))
    }

    pub fn endpoint_mut(&mut self, id: EndpointId) -> Result<&mut Endpoint, SceneError> {
        self.endpoints
            .iter_mut()
            .find(|e| e.id == id)
            .ok_or(SceneError::UnknownEndpoint(id))
    }

    pub fn link(&self, id: LinkId) -> Result<&Link, SceneError> {
        self.links
            .iter()
            .find(|l| l.id == id)
            .ok_or(SceneError::UnknownLink(id))
    }

    /// Configuration with every roll at its off length, epoch 0.
    pub fn all_off(&self) -> SurfaceConfig {
        SurfaceConfig {
            lengths: self.rolls().map(|r| (r.id, r.off_length())).collect(),
            epoch: 0,
        }
    }

    /// Configuration describing the rolls' current exposed lengths.
    pub fn current_config(&self) -> SurfaceConfig {
        SurfaceConfig {
            lengths: self.rolls().map(|r| (r.id, r.exposed_length)).collect(),
            epoch: self.epoch,
        }
    }

    /// Checks that `config` names exactly the scene's rolls, each within bounds.
    pub fn check_config(&self, config: &SurfaceConfig) -> Result<(), SceneError> {
        for roll in self.rolls() {
            let length = config.length(roll.id).ok_or(SceneError::MissingRoll(roll.id))?;
            if !roll.contains(length) {
                return Err(SceneError::LengthOutOfBounds {
                    roll: roll.id,
                    length,
                    min: roll.off_length(),
                    max: roll.max_length(),
                });
            }
        }
        if let Some(extra) = config.lengths.keys().find(|id| self.roll(**id).is_none()) {
            return Err(SceneError::UnknownRoll(*extra));
        }
        Ok(())
    }

    /// Applies a full configuration atomically and returns the new epoch.
    ///
    /// Nothing changes when any roll is rejected.
    pub fn apply_config(&mut self, config: &SurfaceConfig) -> Result<u64, SceneError> {
        self.check_config(config)?;
        for panel in &mut self.panels {
            for roll in &mut panel.rolls {
                roll.exposed_length = config.lengths[&roll.id];
            }
        }
        self.epoch += 1;
        Ok(self.epoch)
    }

    /// Every element as `(roll, strip index, centre, exposed length)`.
    pub fn element_positions(&self, config: &SurfaceConfig) -> Result<Vec<(RollId, usize, Position, f64)>, SceneError> {
        self.check_config(config)?;
        Ok(self
            .rolls()
            .flat_map(|roll| {
                let length = config.lengths[&roll.id];
                roll.element_positions_at(length)
                    .map(move |(i, p)| (roll.id, i, p, length))
            })
            .collect())
    }

    /// Scene-seeded complex log-normal factor applied to a link's direct path.
    pub fn multipath_factor(&self, link: LinkId) -> Complex64 {
        let mut rng = seed::stream(self.multipath_seed, &[0x6d70, link as u64]);
        let gain_db = if self.multipath_sigma_db > 0.0 {
            Normal::new(0.0, self.multipath_sigma_db)
                .expect("finite sigma")
                .sample(&mut rng)
        } else {
            0.0
        };
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        Complex64::from_polar(10f64.powf(gain_db / 20.0), phase)
    }

    /// Direct term of a link, including the multipath factor.
    pub fn direct_term(&self, link: &Link) -> Result<Complex64, SceneError> {
        let tx = self.endpoint(link.tx)?.position;
        let rx = self.endpoint(link.rx)?.position;
        Ok(em::direct_amplitude(tx, rx, link.frequency)? * self.multipath_factor(link.id))
    }

    /// Full channel of `link` under `config`: direct term plus every strip.
    pub fn total_channel(&self, link: &Link, config: &SurfaceConfig) -> Result<Complex64, SceneError> {
        self.check_config(config)?;
        let tx = self.endpoint(link.tx)?.position;
        let rx = self.endpoint(link.rx)?.position;
        self.channel_between(link, tx, rx, |id| config.lengths[&id])
    }

    /// Channel for `link`'s frequency and multipath factor between arbitrary
    /// endpoint positions, with lengths given by `length_of`.
    pub fn channel_between(
        &self,
        link: &Link,
        tx: Position,
        rx: Position,
        length_of: impl Fn(RollId) -> f64,
    ) -> Result<Complex64, SceneError> {
        let f = link.frequency;
        let mut h = em::direct_amplitude(tx, rx, f)? * self.multipath_factor(link.id);
        for roll in self.rolls() {
            let length = length_of(roll.id);
            let refl = em::reflectivity(length, f, &self.resonance);
            if refl == 0.0 {
                continue;
            }
            for (_, elem) in roll.element_positions_at(length) {
                h += self.scatter.scattered(tx, elem, rx, f, refl)?;
            }
        }
        Ok(h)
    }

    /// Returns every violated invariant.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut panels = BTreeSet::new();
        let mut rolls = BTreeSet::new();
        for panel in &self.panels {
            if !panels.insert(panel.id) {
                out.push(Violation::DuplicatePanel(panel.id));
            }
            if !panel.frame.origin.is_finite() || !panel.frame.yaw_deg.is_finite() {
                out.push(Violation::NonFinitePosition(format!("panel {}", panel.id)));
            }
            for roll in &panel.rolls {
                if !rolls.insert(roll.id) {
                    out.push(Violation::DuplicateRoll(roll.id));
                }
                let (lo, hi) = roll.length_bounds;
                if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                    out.push(Violation::BadBounds(roll.id));
                } else if !roll.contains(roll.exposed_length) {
                    out.push(Violation::LengthOutOfBounds {
                        roll: roll.id,
                        length: roll.exposed_length,
                    });
                }
                let extent = strip_extent(&roll.strip_offsets);
                if extent > ROLL_WIDTH + 1e-12 {
                    out.push(Violation::StripsExceedRoll { roll: roll.id, extent });
                }
                if !roll.axis_origin.is_finite() {
                    out.push(Violation::NonFinitePosition(format!("roll {}", roll.id)));
                }
            }
        }
        let mut endpoints = BTreeSet::new();
        for ep in &self.endpoints {
            if !endpoints.insert(ep.id) {
                out.push(Violation::DuplicateEndpoint(ep.id));
            }
            if !ep.position.is_finite() {
                out.push(Violation::NonFinitePosition(format!("endpoint {}", ep.id)));
            }
        }
        let mut links = BTreeSet::new();
        for link in &self.links {
            if !links.insert(link.id) {
                out.push(Violation::DuplicateLink(link.id));
            }
            if link.tx == link.rx {
                out.push(Violation::LinkSelfLoop(link.id));
            }
            for (ep, role) in [(link.tx, Role::Transmitter), (link.rx, Role::Receiver)] {
                match self.endpoints.iter().find(|e| e.id == ep) {
                    None => out.push(Violation::LinkUnknownEndpoint {
                        link: link.id,
                        endpoint: ep,
                    }),
                    Some(e) if e.role != role => out.push(Violation::LinkRole {
                        link: link.id,
                        endpoint: ep,
                    }),
                    Some(_) => {}
                }
            }
        }
        if let Err(e) = self.resonance.validate() {
            out.push(Violation::BadResonance(e.to_string()));
        }
        out
    }
}

/// Span between the first and last strip centre along the rod.
fn strip_extent(offsets: &[f64]) -> f64 {
    let lo = offsets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if offsets.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Validates a scene, returning every violation.
pub fn validate_scene(scene: &Scene) -> Result<(), Vec<Violation>> {
    let v = scene.validate();
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}
