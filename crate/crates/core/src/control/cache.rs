//! Configuration cache keyed by link geometry.
//!
//! Stored as TOML:
//!
//! ```toml
//! tolerance_m = 0.005
//!
//! [[entries]]
//! key = "3f1c..."
//! recorded_gain_db = [6.0, 3.0]
//!
//! [[entries.links]]
//! tx = [3.0, 5.0, 1.5]
//! rx = [0.2, 0.35, 1.0]
//! frequency_hz = 2412000000.0
//!
//! [[entries.rolls]]
//! panel = 0
//! roll = 3
//! length_m = 0.07
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::plant::Plant;
use super::state_space::m_to_mm;
use super::sweep::Session;
use super::ControlError;
use crate::scene::{RollId, Scene, SurfaceConfig};
use crate::Position;

/// Geometry of one link as the cache sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub tx: [f64; 3],
    pub rx: [f64; 3],
    pub frequency_hz: f64,
}

impl LinkGeometry {
    pub fn new(tx: Position, rx: Position, frequency_hz: f64) -> Self {
        Self {
            tx: [tx.x, tx.y, tx.z],
            rx: [rx.x, rx.y, rx.z],
            frequency_hz,
        }
    }

    /// Canonical form: positions rounded to whole centimetres.
    pub fn signature(&self) -> String {
        let cm = |v: &[f64; 3]| {
            v.iter()
                .map(|x| format!("{}", (x * 100.0).round() as i64))
                .collect::<Vec<_>>()
                .join(",")
        };
        format!("{}|{}|{}", cm(&self.tx), cm(&self.rx), self.frequency_hz)
    }

    fn within(&self, other: &LinkGeometry, tol: f64) -> bool {
        self.frequency_hz == other.frequency_hz
            && self.tx.iter().zip(&other.tx).all(|(a, b)| (a - b).abs() <= tol)
            && self.rx.iter().zip(&other.rx).all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// Link geometry of every link in the scene, in link order.
pub fn scene_links(scene: &Scene) -> Result<Vec<LinkGeometry>, ControlError> {
    scene
        .links
        .iter()
        .map(|l| {
            Ok(LinkGeometry::new(
                scene.endpoint(l.tx)?.position,
                scene.endpoint(l.rx)?.position,
                l.frequency.hz(),
            ))
        })
        .collect()
}

/// Hex SHA-256 of the sorted link signatures.
pub fn cache_key(links: &[LinkGeometry]) -> String {
    let mut sigs: Vec<String> = links.iter().map(LinkGeometry::signature).collect();
    sigs.sort();
    hex::encode(Sha256::digest(sigs.join(";").as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRoll {
    pub panel: u32,
    pub roll: u32,
    pub length_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub links: Vec<LinkGeometry>,
    /// Extended rolls only.
    pub rolls: Vec<StoredRoll>,
    /// Gain over all-off per link, in `links` order.
    pub recorded_gain_db: Vec<f64>,
}

impl CacheEntry {
    /// Full configuration: stored rolls extended, the rest of `scene` off.
    pub fn config_for(&self, scene: &Scene) -> Result<SurfaceConfig, ControlError> {
        let mut cfg = scene.all_off();
        for r in &self.rolls {
            let id = RollId::new(r.panel, r.roll);
            if scene.roll(id).is_none() {
                return Err(ControlError::Scene(crate::scene::SceneError::UnknownRoll(id)));
            }
            cfg.set(id, r.length_m);
        }
        scene.check_config(&cfg)?;
        Ok(cfg)
    }
}

fn default_tolerance() -> f64 {
    0.005
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigCache {
    /// A stored link matches when every coordinate is within this distance.
    #[serde(default = "default_tolerance")]
    pub tolerance_m: f64,
    #[serde(default)]
    pub entries: Vec<CacheEntry>,
}

impl Default for ConfigCache {
    fn default() -> Self {
        Self {
            tolerance_m: default_tolerance(),
            entries: Vec::new(),
        }
    }
}

impl ConfigCache {
    /// Stores the extended rolls of `config`, replacing an entry with the same key.
    pub fn store(&mut self, links: &[LinkGeometry], config: &SurfaceConfig, off_length: f64, gains_db: &[f64]) {
        let key = cache_key(links);
        let entry = CacheEntry {
            key: key.clone(),
            links: links.to_vec(),
            rolls: config
                .extended(off_length)
                .map(|(id, l)| StoredRoll {
                    panel: id.panel,
                    roll: id.index,
                    length_m: l,
                })
                .collect(),
            recorded_gain_db: gains_db.to_vec(),
        };
        self.entries.retain(|e| e.key != key);
        self.entries.push(entry);
    }

    /// Entry whose links each match one query link. Exact key match first,
    /// then coordinate tolerance.
    pub fn lookup(&self, links: &[LinkGeometry]) -> Option<&CacheEntry> {
        let key = cache_key(links);
        if let Some(e) = self
            .entries
            .iter()
            .find(|e| e.key == key && e.links.len() == links.len())
        {
            return Some(e);
        }
        self.entries.iter().find(|e| self.matches(e, links))
    }

    fn matches(&self, entry: &CacheEntry, links: &[LinkGeometry]) -> bool {
        if entry.links.len() != links.len() {
            return false;
        }
        let mut used = vec![false; entry.links.len()];
        links.iter().all(|q| {
            match entry
                .links
                .iter()
                .enumerate()
                .find(|(i, s)| !used[*i] && s.within(q, self.tolerance_m))
            {
                Some((i, _)) => {
                    used[i] = true;
                    true
                }
                None => false,
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("cache serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ControlError> {
        toml::from_str(text).map_err(|e| ControlError::Cache(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ControlError> {
        match std::fs::read_to_string(path) {
            Ok(t) => Self::from_toml(&t),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(ControlError::Cache(format!("{}: {e}", path.display()))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ControlError> {
        std::fs::write(path, self.to_toml()).map_err(|e| ControlError::Cache(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheCheck {
    pub valid: bool,
    pub off_dbm: Vec<f64>,
    pub replay_dbm: Vec<f64>,
    pub gains_db: Vec<f64>,
}

/// Resets the surface, measures the all-off reference, then applies the
/// entry and measures again. Valid when every link keeps at least
/// `retain_fraction` of its recorded gain; links recorded without gain only
/// need to lose no more than the noise margin.
pub fn cache_validate<P: Plant>(
    session: &mut Session<P>,
    entry: &CacheEntry,
    scene: &Scene,
    retain_fraction: f64,
    margin_db: f64,
) -> Result<CacheCheck, ControlError> {
    let off_targets: Vec<_> = session.rolls().iter().map(|&r| (r, session.off_mm(r))).collect();
    session.move_to(&off_targets)?;
    let off_dbm = session.measure()?;
    let cfg = entry.config_for(scene)?;
    let targets: Vec<_> = cfg.lengths.iter().map(|(&r, &l)| (r, m_to_mm(l))).collect();
    session.move_to(&targets)?;
    let replay_dbm = session.measure()?;
    let gains_db: Vec<f64> = replay_dbm.iter().zip(&off_dbm).map(|(a, b)| a - b).collect();
    let valid = gains_db.iter().zip(&entry.recorded_gain_db).all(|(&g, &r)| {
        if r > 0.0 {
            g >= retain_fraction * r
        } else {
            g >= -margin_db
        }
    });
    Ok(CacheCheck {
        valid,
        off_dbm,
        replay_dbm,
        gains_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    fn geo(dx: f64) -> Vec<LinkGeometry> {
        vec![
            LinkGeometry::new(Vec3::new(3.0 + dx, 5.0, 1.5), Vec3::new(0.2, 0.35, 1.0), 2.412e9),
            LinkGeometry::new(Vec3::new(-2.0, 6.0, 1.0), Vec3::new(1.2, 0.35, 0.9), 5.21e9),
        ]
    }

    fn cfg() -> SurfaceConfig {
        let mut c = SurfaceConfig::default();
        c.set(RollId::new(0, 0), 0.01);
        c.set(RollId::new(0, 1), 0.07);
        c.set(RollId::new(2, 5), 0.025);
        c
    }

    #[test]
    fn store_and_lookup() {
        let mut cache = ConfigCache::default();
        cache.store(&geo(0.0), &cfg(), 0.01, &[5.0, 2.0]);
        let e = cache.lookup(&geo(0.0)).unwrap();
        assert_eq!(e.rolls.len(), 2);
        assert!(e.rolls.iter().all(|r| r.length_m > 0.01));
        assert!(cache.lookup(&geo(0.004)).is_some());
        assert!(cache.lookup(&geo(-0.004)).is_some());
        assert!(cache.lookup(&geo(0.5)).is_none());
        let mut swapped = geo(0.0);
        swapped.reverse();
        assert!(cache.lookup(&swapped).is_some());
        let mut other_freq = geo(0.0);
        other_freq[0].frequency_hz = 2.437e9;
        assert!(cache.lookup(&other_freq).is_none());
    }

    #[test]
    fn key_is_order_independent_and_rounded() {
        let mut g = geo(0.0);
        let k = cache_key(&g);
        g.reverse();
        assert_eq!(cache_key(&g), k);
        assert_eq!(cache_key(&geo(0.001)), k);
        assert_ne!(cache_key(&geo(0.02)), k);
    }

    #[test]
    fn toml_round_trip() {
        let mut cache = ConfigCache::default();
        cache.store(&geo(0.0), &cfg(), 0.01, &[5.0, 2.0]);
        cache.store(&geo(1.0), &cfg(), 0.01, &[1.0, 0.0]);
        let text = cache.to_toml();
        assert_eq!(ConfigCache::from_toml(&text).unwrap(), cache);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.toml");
        assert_eq!(ConfigCache::load(&path).unwrap(), ConfigCache::default());
        cache.save(&path).unwrap();
        assert_eq!(ConfigCache::load(&path).unwrap(), cache);
    }
}
