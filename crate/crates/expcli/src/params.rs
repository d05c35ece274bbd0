//! Every tunable of a run, addressable by dotted key.

use std::fmt;
use std::str::FromStr;

use rollsurf_core::control::{ControlParams, MeasurementPolicy};
use rollsurf_core::scene::{Preset, Scenario};
use rollsurf_core::MotorSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("unknown parameter {0:?}")]
    Unknown(String),
    #[error("parameter {key}: cannot use {value:?}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("expected key=value, got {0:?}")]
    Syntax(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Inproc,
    Socket,
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inproc" => Ok(Transport::Inproc),
            "socket" => Ok(Transport::Socket),
            _ => Err(format!("transport must be inproc or socket, got {s:?}")),
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transport::Inproc => "inproc",
            Transport::Socket => "socket",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    pub preset: String,
    /// One link per entry.
    pub frequencies_hz: Vec<f64>,
    pub rx_standoff_m: f64,
    pub tx_distance_min_m: f64,
    pub tx_distance_max_m: f64,
    pub tx_height_min_m: f64,
    pub tx_height_max_m: f64,
    pub tx_power_dbm: f64,
    pub multipath_sigma_db: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        let s = Scenario::default();
        Self {
            preset: s.preset.name().into(),
            frequencies_hz: s.frequencies_hz,
            rx_standoff_m: s.rx_standoff,
            tx_distance_min_m: s.tx_distance.0,
            tx_distance_max_m: s.tx_distance.1,
            tx_height_min_m: s.tx_height.0,
            tx_height_max_m: s.tx_height.1,
            tx_power_dbm: s.tx_power_dbm,
            multipath_sigma_db: s.multipath_sigma_db,
        }
    }
}

impl ScenarioParams {
    pub fn scenario(&self, frequencies_hz: Vec<f64>) -> Result<Scenario, ParamError> {
        let preset: Preset =
            self.preset
                .parse()
                .map_err(|e: rollsurf_core::scene::SceneError| ParamError::BadValue {
                    key: "scenario.preset".into(),
                    value: self.preset.clone(),
                    reason: e.to_string(),
                })?;
        Ok(Scenario {
            preset,
            frequencies_hz,
            rx_standoff: self.rx_standoff_m,
            tx_distance: (self.tx_distance_min_m, self.tx_distance_max_m),
            tx_height: (self.tx_height_min_m, self.tx_height_max_m),
            tx_power_dbm: self.tx_power_dbm,
            multipath_sigma_db: self.multipath_sigma_db,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorParams {
    pub rpm: f64,
    pub rod_radius_m: f64,
    pub min_step_m: f64,
}

impl Default for MotorParams {
    fn default() -> Self {
        let m = MotorSpec::default();
        Self {
            rpm: m.rpm,
            rod_radius_m: m.rod_radius,
            min_step_m: m.min_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetParams {
    pub port: u16,
    pub latency_ms: f64,
    pub jitter_ms: f64,
    pub loss: f64,
    pub controllers: usize,
    pub feedback_timeout_s: f64,
    pub capture: bool,
}

impl Default for NetParams {
    fn default() -> Self {
        Self {
            port: 0,
            latency_ms: 0.0,
            jitter_ms: 0.0,
            loss: 0.0,
            controllers: 1,
            feedback_timeout_s: 5.0,
            capture: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyParams {
    /// Side of the square arrays in the power and utilization studies.
    pub grid: usize,
    pub frequencies_hz: Vec<f64>,
    /// Frequencies added one at a time for the elements-needed study.
    pub scaling_frequencies_hz: Vec<f64>,
    pub grid_cap: usize,
}

impl Default for StudyParams {
    fn default() -> Self {
        Self {
            grid: 20,
            frequencies_hz: rollsurf_core::baselines::STUDY_FREQUENCIES_HZ.to_vec(),
            scaling_frequencies_hz: rollsurf_core::baselines::SCALING_FREQUENCIES_HZ.to_vec(),
            grid_cap: rollsurf_core::baselines::GRID_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheParams {
    pub tolerance_m: f64,
    pub retain_fraction: f64,
}

impl Default for CacheParams {
    fn default() -> Self {
        Self {
            tolerance_m: 0.005,
            retain_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkCountParams {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    pub seed: u64,
    pub trials: u64,
    pub transport: Transport,
    pub scenario: ScenarioParams,
    pub policy: MeasurementPolicy,
    pub motor: MotorParams,
    pub net: NetParams,
    pub study: StudyParams,
    pub cache: CacheParams,
    /// Endpoint displacement for the perturbation experiment (m).
    pub perturb_distance_m: f64,
    /// Link counts cycled through by the concurrent-links experiment.
    pub concurrent_links: LinkCountParams,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 20,
            transport: Transport::Inproc,
            scenario: ScenarioParams::default(),
            policy: MeasurementPolicy::default(),
            motor: MotorParams::default(),
            net: NetParams::default(),
            study: StudyParams::default(),
            cache: CacheParams::default(),
            perturb_distance_m: 0.2,
            concurrent_links: LinkCountParams { min: 2, max: 4 },
        }
    }
}

impl RunParams {
    fn tree(&self) -> toml::Table {
        toml::Table::try_from(self).expect("parameters serialize")
    }

    /// Sets one dotted key from text, keeping the key's existing type.
    /// Lists are written as TOML arrays or comma-separated values.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ParamError> {
        let bad = |reason: String| ParamError::BadValue {
            key: key.into(),
            value: value.into(),
            reason,
        };
        let mut tree = self.tree();
        let mut slot: &mut toml::Table = &mut tree;
        let parts: Vec<&str> = key.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            slot = match slot.get_mut(*p) {
                Some(toml::Value::Table(t)) => t,
                _ => return Err(ParamError::Unknown(key.into())),
            };
        }
        let leaf = parts[parts.len() - 1];
        let current = slot.get(leaf).ok_or_else(|| ParamError::Unknown(key.into()))?;
        let parsed = parse_like(current, value.trim()).map_err(bad)?;
        slot.insert(leaf.into(), parsed);
        let next: RunParams = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| bad(e.to_string()))?;
        next.check().map_err(bad)?;
        *self = next;
        Ok(())
    }

    /// `key=value` form of [`RunParams::set`].
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ParamError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ParamError::Syntax(pair.into()))?;
        self.set(k.trim(), v)
    }

    /// Every parameter as (dotted key, TOML value text), sorted by key.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        flatten("", &toml::Value::Table(self.tree()), &mut out);
        out.sort();
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("parameters serialize")
    }

    fn check(&self) -> Result<(), String> {
        self.policy.validate().map_err(|e| e.to_string())?;
        self.motor_spec()?;
        if !(0.0..1.0).contains(&self.net.loss) {
            return Err("net.loss must be in [0, 1)".into());
        }
        if self.concurrent_links.min == 0 || self.concurrent_links.min > self.concurrent_links.max {
            return Err("concurrent_links needs 1 <= min <= max".into());
        }
        if self.trials == 0 {
            return Err("trials must be at least 1".into());
        }
        self.scenario.scenario(vec![]).map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn motor_spec(&self) -> Result<MotorSpec, String> {
        MotorSpec::new(self.motor.rpm, self.motor.rod_radius_m, self.motor.min_step_m).map_err(|e| e.to_string())
    }

    pub fn control(&self, seed: u64) -> ControlParams {
        ControlParams {
            policy: self.policy,
            motor: self.motor_spec().expect("validated motor"),
            seed,
            states_mm: None,
        }
    }
}

fn parse_like(current: &toml::Value, text: &str) -> Result<toml::Value, String> {
    use toml::Value as V;
    Ok(match current {
        V::String(_) => V::String(text.trim_matches('"').to_string()),
        V::Integer(_) => V::Integer(text.parse::<i64>().map_err(|e| e.to_string())?),
        V::Float(_) => V::Float(text.parse::<f64>().map_err(|e| e.to_string())?),
        V::Boolean(_) => V::Boolean(text.parse::<bool>().map_err(|e| e.to_string())?),
        V::Array(items) => {
            let inner = text.trim_start_matches('[').trim_end_matches(']');
            let template = items.first().cloned().unwrap_or(V::Float(0.0));
            V::Array(
                inner
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_like(&template, s))
                    .collect::<Result<_, _>>()?,
            )
        }
        V::Table(_) => return Err("is a group of parameters, set a member instead".into()),
        V::Datetime(_) => return Err("unsupported type".into()),
    })
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_keeps_types() {
        let mut p = RunParams::default();
        p.set("policy.noise_sigma_db", "0").unwrap();
        assert_eq!(p.policy.noise_sigma_db, 0.0);
        p.set("trials", "7").unwrap();
        assert_eq!(p.trials, 7);
        p.set("transport", "socket").unwrap();
        assert_eq!(p.transport, Transport::Socket);
        p.set_pair("scenario.frequencies_hz=2.412e9, 5.21e9").unwrap();
        assert_eq!(p.scenario.frequencies_hz, vec![2.412e9, 5.21e9]);
        p.set("scenario.frequencies_hz", "[915e6]").unwrap();
        assert_eq!(p.scenario.frequencies_hz, vec![915e6]);
        p.set("net.capture", "true").unwrap();
        assert!(p.net.capture);
    }

    #[test]
    fn bad_sets_leave_params_untouched() {
        let mut p = RunParams::default();
        let before = p.clone();
        assert!(matches!(p.set("policy.nope", "1"), Err(ParamError::Unknown(_))));
        assert!(matches!(p.set("nope", "1"), Err(ParamError::Unknown(_))));
        assert!(p.set("trials", "many").is_err());
        assert!(p.set("transport", "carrier-pigeon").is_err());
        assert!(p.set("motor.rpm", "-3").is_err());
        assert!(p.set("net.loss", "1.5").is_err());
        assert!(p.set("scenario.preset", "setup9").is_err());
        assert!(p.set("policy", "3").is_err());
        assert!(matches!(p.set_pair("trials"), Err(ParamError::Syntax(_))));
        assert_eq!(p, before);
    }

    #[test]
    fn entries_cover_every_key() {
        let p = RunParams::default();
        let entries = p.entries();
        let keys: Vec<&str> = entries.iter().map(|(k, _)| k.as_str()).collect();
        for k in [
            "seed",
            "policy.dwell_s",
            "motor.rpm",
            "net.loss",
            "study.grid",
            "cache.retain_fraction",
        ] {
            assert!(keys.contains(&k), "{k}");
        }
        let mut q = RunParams::default();
        for (k, v) in &entries {
            q.set(k, v).unwrap();
        }
        assert_eq!(q, p);
    }
}
