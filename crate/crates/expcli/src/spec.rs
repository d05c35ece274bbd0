//! Experiment spec files.
//!
//! ```toml
//! name = "group-speedup"
//! trials = 50
//! seed = 7
//! out = "out/speedup"
//! # scene = "scenes/desk.toml"   # fixed scene instead of a random one per trial
//! # algorithm = "enumerate"      # where the experiment allows a choice
//!
//! [set]
//! "policy.noise_sigma_db" = 0.0
//! "scenario.preset" = "setup3"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::{self, Experiment};
use crate::params::RunParams;
use crate::ExpError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmChoice {
    Enumerate,
    Group,
    CacheReplay,
    RfocusStudy,
}

impl AlgorithmChoice {
    pub fn name(self) -> &'static str {
        match self {
            AlgorithmChoice::Enumerate => "enumerate",
            AlgorithmChoice::Group => "group",
            AlgorithmChoice::CacheReplay => "cache-replay",
            AlgorithmChoice::RfocusStudy => "rfocus-study",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<AlgorithmChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub set: BTreeMap<String, toml::Value>,
}

impl ExperimentSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            scene: None,
            algorithm: None,
            trials: None,
            seed: None,
            out: None,
            set: BTreeMap::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ExpError> {
        let spec: Self = toml::from_str(text).map_err(|e| ExpError::Spec(e.to_string()))?;
        spec.experiment()?;
        Ok(spec)
    }

    /// Reads a spec file. Relative scene paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ExpError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExpError::Io(path.to_path_buf(), e.to_string()))?;
        let mut spec = Self::parse(&text)?;
        if let (Some(scene), Some(dir)) = (&spec.scene, path.parent()) {
            if scene.is_relative() {
                spec.scene = Some(dir.join(scene));
            }
        }
        Ok(spec)
    }

    pub fn experiment(&self) -> Result<&'static Experiment, ExpError> {
        catalog::find(&self.name).ok_or_else(|| ExpError::UnknownExperiment(self.name.clone()))
    }

    /// Catalog defaults, then `[set]`, then the top-level seed and trials.
    pub fn params(&self) -> Result<RunParams, ExpError> {
        let exp = self.experiment()?;
        let mut p = RunParams::default();
        for (k, v) in exp.defaults {
            p.set(k, v)?;
        }
        for (k, v) in &self.set {
            let text = match v {
                toml::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            p.set(k, &text)?;
        }
        if let Some(s) = self.seed {
            p.seed = s;
        }
        if let Some(t) = self.trials {
            p.set("trials", &t.to_string())?;
        }
        Ok(p)
    }

    pub fn algorithm(&self) -> Result<AlgorithmChoice, ExpError> {
        let exp = self.experiment()?;
        match self.algorithm {
            None => Ok(exp.algorithm),
            Some(a) if exp.algorithms.contains(&a) => Ok(a),
            Some(a) => Err(ExpError::Spec(format!(
                "experiment {} does not run algorithm {}",
                exp.name,
                a.name()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let spec = ExperimentSpec::parse(
            r#"
name = "group-speedup"
trials = 5
seed = 7
[set]
"policy.noise_sigma_db" = 0.0
"scenario.preset" = "setup3"
"scenario.frequencies_hz" = [2.412e9, 5.21e9]
"#,
        )
        .unwrap();
        let p = spec.params().unwrap();
        assert_eq!((p.trials, p.seed), (5, 7));
        assert_eq!(p.policy.noise_sigma_db, 0.0);
        assert_eq!(p.scenario.preset, "setup3");
        assert_eq!(p.scenario.frequencies_hz, vec![2.412e9, 5.21e9]);
    }

    #[test]
    fn unknown_names_and_keys_are_rejected() {
        assert!(matches!(
            ExperimentSpec::parse("name = \"fig9-nothing\""),
            Err(ExpError::UnknownExperiment(_))
        ));
        assert!(ExperimentSpec::parse("name = \"fig3b-power\"\nbogus = 1").is_err());
        let spec = ExperimentSpec::parse("name = \"fig3b-power\"\n[set]\n\"policy.nope\" = 1").unwrap();
        assert!(spec.params().is_err());
        let spec = ExperimentSpec::parse("name = \"fig3b-power\"\nalgorithm = \"group\"").unwrap();
        assert!(spec.algorithm().is_err());
    }
}
