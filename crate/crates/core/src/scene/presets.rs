//! Named panel layouts and randomized desk scenarios built on them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_default_panel, Endpoint, FeedbackTransport, Link, Panel, PanelFrame, Role, Scene, SceneError, StripSpec,
    PANEL_EXTENT,
};
use crate::{seed, Frequency, Vec3};

/// Gap between neighbouring panel frames (m).
pub const PANEL_GAP: f64 = 0.05;
/// Height of the top rod of a desk-level panel (m).
const DESK_TOP: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Four panels side by side.
    Setup1,
    /// Two panels on each of two perpendicular walls.
    Setup2,
    /// Two columns of two panels stacked vertically.
    Setup3,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Setup1, Preset::Setup2, Preset::Setup3];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Setup1 => "setup1",
            Preset::Setup2 => "setup2",
            Preset::Setup3 => "setup3",
        }
    }

    pub fn frames(self) -> Vec<PanelFrame> {
        let pitch = PANEL_EXTENT + PANEL_GAP;
        match self {
            Preset::Setup1 => (0..4)
                .map(|i| PanelFrame::new(Vec3::new(i as f64 * pitch, 0.0, DESK_TOP), 0.0))
                .collect(),
            Preset::Setup2 => {
                let mut v: Vec<_> = (0..2)
                    .map(|i| PanelFrame::new(Vec3::new(PANEL_GAP + i as f64 * pitch, 0.0, DESK_TOP), 0.0))
                    .collect();
                // Facing +x; rods run towards -y from the far end.
                v.extend((0..2).map(|i| {
                    PanelFrame::new(
                        Vec3::new(0.0, PANEL_GAP + i as f64 * pitch + PANEL_EXTENT, DESK_TOP),
                        -90.0,
                    )
                }));
                v
            }
            Preset::Setup3 => (0..4)
                .map(|i| {
                    let col = (i % 2) as f64;
                    let row = (i / 2) as f64;
                    PanelFrame::new(Vec3::new(col * pitch, 0.0, DESK_TOP + pitch - row * pitch), 0.0)
                })
                .collect(),
        }
    }

    pub fn panels(self, strip: &StripSpec, off_length: f64) -> Vec<Panel> {
        self.frames()
            .into_iter()
            .enumerate()
            .map(|(i, frame)| build_default_panel(i as u32, frame, strip, off_length))
            .collect()
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s
            .trim()
            .trim_start_matches('#')
            .to_ascii_lowercase()
            .replace(['#', '-', '_'], "")
            .as_str()
        {
            "setup1" | "1" => Ok(Preset::Setup1),
            "setup2" | "2" => Ok(Preset::Setup2),
            "setup3" | "3" => Ok(Preset::Setup3),
            _ => Err(SceneError::Format(format!("unknown preset {s:?}"))),
        }
    }
}

/// Randomized desk scenario: receivers a short distance in front of the
/// panels, transmitters across the room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub preset: Preset,
    pub frequencies_hz: Vec<f64>,
    pub rx_standoff: f64,
    pub tx_distance: (f64, f64),
    pub tx_height: (f64, f64),
    pub tx_power_dbm: f64,
    pub multipath_sigma_db: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            preset: Preset::Setup1,
            frequencies_hz: vec![2.412e9],
            rx_standoff: 0.35,
            tx_distance: (3.0, 12.0),
            tx_height: (0.5, 2.5),
            tx_power_dbm: 20.0,
            multipath_sigma_db: 3.0,
        }
    }
}

impl Scenario {
    pub fn with_frequencies(preset: Preset, frequencies_hz: Vec<f64>) -> Self {
        Self {
            preset,
            frequencies_hz,
            ..Self::default()
        }
    }

    /// One transmitter and one receiver per frequency; link `i` uses
    /// endpoints `2i` (TX) and `2i + 1` (RX).
    pub fn build(&self, seed: u64) -> Result<Scene, SceneError> {
        let strip = StripSpec::default();
        let resonance = crate::ResonanceModel::default();
        self.build_with_panels(self.preset.panels(&strip, resonance.off_length), seed)
    }

    /// Same endpoint placement around an arbitrary set of panels.
    pub fn build_with_panels(&self, panels: Vec<Panel>, seed: u64) -> Result<Scene, SceneError> {
        let strip = StripSpec::default();
        let resonance = crate::ResonanceModel::default();
        if panels.is_empty() {
            return Err(SceneError::Format("scenario needs at least one panel".into()));
        }
        let mut endpoints = Vec::new();
        let mut links = Vec::new();
        for (i, &hz) in self.frequencies_hz.iter().enumerate() {
            let mut rng = seed::stream(seed, &[0x5ce0, i as u64]);
            let panel = &panels[rng.random_range(0..panels.len())];
            let n = panel.frame.normal();
            let along = panel.frame.rod_direction() * rng.random_range(0.05..PANEL_EXTENT - 0.05);
            let top = panel
                .rolls
                .iter()
                .map(|r| r.axis_origin.z)
                .fold(f64::NEG_INFINITY, f64::max);
            let bottom = panel
                .rolls
                .iter()
                .map(|r| r.axis_origin.z - r.max_length())
                .fold(f64::INFINITY, f64::min);
            let mut rx = panel.frame.origin + along + n * self.rx_standoff;
            rx.z = if bottom < top {
                rng.random_range(bottom..top)
            } else {
                panel.frame.origin.z
            };
            let centre = surface_centre(&panels);
            let facing = mean_normal(&panels);
            let d = rng.random_range(self.tx_distance.0..=self.tx_distance.1);
            // Azimuth measured from the wall, kept off grazing incidence.
            let ang = rng.random_range(0.2..std::f64::consts::PI - 0.2);
            let side = Vec3::new(facing.y, -facing.x, 0.0);
            let mut tx = centre + side * (d * ang.cos()) + facing * (d * ang.sin());
            tx.z = rng.random_range(self.tx_height.0..=self.tx_height.1);
            let tx_id = 2 * i as u32;
            endpoints.push(Endpoint {
                id: tx_id,
                position: tx,
                role: Role::Transmitter,
                feedback_transport: FeedbackTransport::InProcess,
            });
            endpoints.push(Endpoint {
                id: tx_id + 1,
                position: rx,
                role: Role::Receiver,
                feedback_transport: FeedbackTransport::InProcess,
            });
            links.push(Link {
                id: i as u32,
                tx: tx_id,
                rx: tx_id + 1,
                frequency: Frequency::from_hz(hz)?,
                tx_power_dbm: self.tx_power_dbm,
            });
        }
        let mut scene = Scene::new(panels, endpoints, links, seed::derive(seed, &[0x6d70]));
        scene.multipath_sigma_db = self.multipath_sigma_db;
        scene.resonance = resonance;
        scene.strip = strip;
        Ok(scene)
    }
}

fn surface_centre(panels: &[Panel]) -> Vec3 {
    let sum = panels.iter().fold(Vec3::zero(), |acc, p| acc + p.frame.center());
    sum * (1.0 / panels.len().max(1) as f64)
}

fn mean_normal(panels: &[Panel]) -> Vec3 {
    panels
        .iter()
        .fold(Vec3::zero(), |acc, p| acc + p.frame.normal())
        .normalized()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build_valid_disjoint_layouts() {
        for preset in Preset::ALL {
            let panels = preset.panels(&StripSpec::default(), 0.01);
            assert_eq!(panels.len(), 4);
            let pts: Vec<_> = panels
                .iter()
                .flat_map(|p| p.rolls.iter())
                .flat_map(|r| r.element_positions_at(0.16).map(|e| e.1).collect::<Vec<_>>())
                .collect();
            for (i, a) in pts.iter().enumerate() {
                for b in &pts[i + 1..] {
                    assert!(a.distance(*b) > 1e-6, "{preset}: overlapping elements");
                }
            }
        }
    }

    #[test]
    fn parse_preset_names() {
        assert_eq!("setup#2".parse::<Preset>().unwrap(), Preset::Setup2);
        assert_eq!("setup1".parse::<Preset>().unwrap(), Preset::Setup1);
        assert!("setup9".parse::<Preset>().is_err());
    }

    #[test]
    fn scenario_places_endpoints_as_described() {
        let sc = Scenario::with_frequencies(Preset::Setup1, vec![2.412e9, 5.21e9]);
        for seed in 0..20 {
            let scene = sc.build(seed).unwrap();
            assert!(scene.validate().is_empty());
            for link in &scene.links {
                let tx = scene.endpoint(link.tx).unwrap().position;
                let rx = scene.endpoint(link.rx).unwrap().position;
                assert!((rx.y - 0.35).abs() < 1e-12);
                assert!(tx.y > 0.0 && (0.5..=2.5).contains(&tx.z));
                let centre = surface_centre(&scene.panels);
                let flat = Vec3::new(tx.x - centre.x, tx.y - centre.y, 0.0).norm();
                assert!((3.0 - 1e-9..=12.0 + 1e-9).contains(&flat));
            }
        }
        assert_eq!(sc.build(5).unwrap(), sc.build(5).unwrap());
    }
}
