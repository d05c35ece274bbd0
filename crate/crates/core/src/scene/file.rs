//! TOML scene description.
//!
//! ```toml
//! multipath_seed = 7
//! multipath_sigma_db = 3.0
//!
//! [layout]            # optional: expands to panels 0..3
//! preset = "setup1"
//!
//! [[panels]]          # or explicit panels
//! id = 0
//! origin = [0.0, 0.0, 1.2]
//! yaw_deg = 0.0
//! template = "default"
//! exposed_lengths = [0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01]
//!
//! [[endpoints]]
//! id = 0
//! position = [3.0, 5.0, 1.5]
//! role = "transmitter"
//! feedback_transport = "in-process"
//!
//! [[links]]
//! id = 0
//! tx = 0
//! rx = 1
//! frequency_hz = 2412000000.0
//! tx_power_dbm = 20.0
//! ```
//!
//! Optional tables `[resonance]`, `[scatter]` and `[strip]` override the
//! channel model and strip geometry.

use serde::{Deserialize, Serialize};

use super::{
    build_default_panel, Endpoint, FeedbackTransport, Link, PanelFrame, Preset, Role, Scene, SceneError, StripSpec,
};
use crate::{Frequency, ResonanceModel, ScatterModel, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default)]
    pub multipath_seed: u64,
    #[serde(default = "default_sigma")]
    pub multipath_sigma_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<Layout>,
    #[serde(default)]
    pub resonance: ResonanceModel,
    #[serde(default)]
    pub scatter: ScatterModel,
    #[serde(default)]
    pub strip: StripSpec,
    #[serde(default)]
    pub panels: Vec<PanelEntry>,
    #[serde(default)]
    pub endpoints: Vec<EndpointEntry>,
    #[serde(default)]
    pub links: Vec<LinkEntry>,
}

fn default_sigma() -> f64 {
    3.0
}

fn default_template() -> String {
    "default".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub preset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelEntry {
    pub id: u32,
    pub origin: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default = "default_template")]
    pub template: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exposed_lengths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointEntry {
    pub id: u32,
    pub position: [f64; 3],
    pub role: Role,
    #[serde(default)]
    pub feedback_transport: FeedbackTransport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEntry {
    pub id: u32,
    pub tx: u32,
    pub rx: u32,
    pub frequency_hz: f64,
    #[serde(default)]
    pub tx_power_dbm: f64,
}

fn arr(v: Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn vec(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self, SceneError> {
        toml::from_str(text).map_err(|e| SceneError::Format(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene file serializes")
    }

    pub fn from_scene(scene: &Scene) -> Self {
        Self {
            multipath_seed: scene.multipath_seed,
            multipath_sigma_db: scene.multipath_sigma_db,
            layout: None,
            resonance: scene.resonance,
            scatter: scene.scatter,
            strip: scene.strip,
            panels: scene
                .panels
                .iter()
                .map(|p| PanelEntry {
                    id: p.id,
                    origin: arr(p.frame.origin),
                    yaw_deg: p.frame.yaw_deg,
                    template: default_template(),
                    exposed_lengths: p.rolls.iter().map(|r| r.exposed_length).collect(),
                })
                .collect(),
            endpoints: scene
                .endpoints
                .iter()
                .map(|e| EndpointEntry {
                    id: e.id,
                    position: arr(e.position),
                    role: e.role,
                    feedback_transport: e.feedback_transport,
                })
                .collect(),
            links: scene
                .links
                .iter()
                .map(|l| LinkEntry {
                    id: l.id,
                    tx: l.tx,
                    rx: l.rx,
                    frequency_hz: l.frequency.hz(),
                    tx_power_dbm: l.tx_power_dbm,
                })
                .collect(),
        }
    }

    /// Builds the scene. Structural problems are reported by
    /// [`Scene::validate`], not here, except for unparseable values.
    pub fn to_scene(&self) -> Result<Scene, SceneError> {
        self.resonance.validate()?;
        let mut panels = Vec::new();
        if let Some(layout) = &self.layout {
            let preset: Preset = layout.preset.parse()?;
            panels.extend(preset.panels(&self.strip, self.resonance.off_length));
        }
        for entry in &self.panels {
            if entry.template != "default" {
                return Err(SceneError::Format(format!(
                    "panel {}: unknown template {:?}",
                    entry.id, entry.template
                )));
            }
            let mut panel = build_default_panel(
                entry.id,
                PanelFrame::new(vec(entry.origin), entry.yaw_deg),
                &self.strip,
                self.resonance.off_length,
            );
            if !entry.exposed_lengths.is_empty() {
                if entry.exposed_lengths.len() != panel.rolls.len() {
                    return Err(SceneError::Format(format!(
                        "panel {}: {} exposed lengths for {} rolls",
                        entry.id,
                        entry.exposed_lengths.len(),
                        panel.rolls.len()
                    )));
                }
                for (roll, &l) in panel.rolls.iter_mut().zip(&entry.exposed_lengths) {
                    roll.exposed_length = l;
                }
            }
            panels.push(panel);
        }
        let endpoints = self
            .endpoints
            .iter()
            .map(|e| Endpoint {
                id: e.id,
                position: vec(e.position),
                role: e.role,
                feedback_transport: e.feedback_transport,
            })
            .collect();
        let links = self
            .links
            .iter()
            .map(|l| {
                Ok(Link {
                    id: l.id,
                    tx: l.tx,
                    rx: l.rx,
                    frequency: Frequency::from_hz(l.frequency_hz)?,
                    tx_power_dbm: l.tx_power_dbm,
                })
            })
            .collect::<Result<Vec<_>, SceneError>>()?;
        let mut scene = Scene::new(panels, endpoints, links, self.multipath_seed);
        scene.multipath_sigma_db = self.multipath_sigma_db;
        scene.resonance = self.resonance;
        scene.scatter = self.scatter;
        scene.strip = self.strip;
        Ok(scene)
    }
}

impl Scene {
    pub fn from_toml(text: &str) -> Result<Self, SceneError> {
        SceneFile::parse(text)?.to_scene()
    }

    pub fn to_toml(&self) -> String {
        SceneFile::from_scene(self).to_toml()
    }
}
