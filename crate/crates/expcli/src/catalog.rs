//! Named experiments.

use crate::spec::AlgorithmChoice::{self, *};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    ElementsNeeded,
    Power,
    Utilization,
    SingleLink,
    ConcurrentLinks,
    RollLengths,
    PanelDynamics,
    ConvergenceTime,
    GroupSpeedup,
    CacheReplay,
    Perturbation,
}

#[derive(Debug)]
pub struct Experiment {
    pub name: &'static str,
    pub description: &'static str,
    pub family: Family,
    pub algorithm: AlgorithmChoice,
    pub algorithms: &'static [AlgorithmChoice],
    /// Parameter overrides applied before the spec's own.
    pub defaults: &'static [(&'static str, &'static str)],
}

const CONTROL: &[AlgorithmChoice] = &[Group, Enumerate];

pub const CATALOG: &[Experiment] = &[
    Experiment {
        name: "fig3a-elements-needed",
        description: "array size each design needs to match a 10x10 single-link tunable array, 1 to 4 frequencies",
        family: Family::ElementsNeeded,
        algorithm: RfocusStudy,
        algorithms: &[RfocusStudy],
        defaults: &[("trials", "200")],
    },
    Experiment {
        name: "fig3b-power",
        description: "delivered power of wideband, multi-design and tunable 20x20 arrays serving three links",
        family: Family::Power,
        algorithm: RfocusStudy,
        algorithms: &[RfocusStudy],
        defaults: &[("trials", "200")],
    },
    Experiment {
        name: "fig3c-utilization",
        description: "elements switched on per design for three links",
        family: Family::Utilization,
        algorithm: RfocusStudy,
        algorithms: &[RfocusStudy],
        defaults: &[("trials", "200")],
    },
    Experiment {
        name: "single-link-gain",
        description: "RSSI gain for one link per trial, cycling through the bands",
        family: Family::SingleLink,
        algorithm: Group,
        algorithms: CONTROL,
        defaults: &[
            ("trials", "40"),
            ("scenario.frequencies_hz", "915e6, 2.412e9, 3.7e9, 5.21e9"),
        ],
    },
    Experiment {
        name: "concurrent-links",
        description: "2 to 4 simultaneous links on different bands around four desk panels",
        family: Family::ConcurrentLinks,
        algorithm: Group,
        algorithms: CONTROL,
        defaults: &[
            ("trials", "30"),
            ("scenario.frequencies_hz", "2.412e9, 5.21e9, 915e6, 3.7e9"),
        ],
    },
    Experiment {
        name: "roll-length-distribution",
        description: "lengths chosen for extended rolls",
        family: Family::RollLengths,
        algorithm: Group,
        algorithms: CONTROL,
        defaults: &[("trials", "30"), ("scenario.frequencies_hz", "915e6, 2.412e9, 5.21e9")],
    },
    Experiment {
        name: "extended-rolls-per-panel",
        description: "number of extended rolls on each panel",
        family: Family::PanelDynamics,
        algorithm: Group,
        algorithms: CONTROL,
        defaults: &[("trials", "30"), ("scenario.frequencies_hz", "915e6, 2.412e9, 5.21e9")],
    },
    Experiment {
        name: "convergence-time",
        description: "actuation and dwell time of both search algorithms",
        family: Family::ConvergenceTime,
        algorithm: Group,
        algorithms: CONTROL,
        defaults: &[("trials", "30")],
    },
    Experiment {
        name: "group-speedup",
        description: "group sweep time over enumeration time on the same scene",
        family: Family::GroupSpeedup,
        algorithm: Group,
        algorithms: CONTROL,
        defaults: &[("trials", "50"), ("scenario.frequencies_hz", "2.412e9")],
    },
    Experiment {
        name: "cache-replay",
        description: "store each optimized configuration, reapply it from the cache and compare gains",
        family: Family::CacheReplay,
        algorithm: CacheReplay,
        algorithms: &[CacheReplay],
        defaults: &[("trials", "20")],
    },
    Experiment {
        name: "perturbation-stability",
        description: "gain kept after moving the transmitter without searching again",
        family: Family::Perturbation,
        algorithm: Group,
        algorithms: CONTROL,
        defaults: &[("trials", "15")],
    },
];

pub fn find(name: &str) -> Option<&'static Experiment> {
    CATALOG.iter().find(|e| e.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::RunParams;

    #[test]
    fn names_are_unique_and_defaults_apply() {
        for (i, e) in CATALOG.iter().enumerate() {
            assert!(CATALOG[i + 1..].iter().all(|o| o.name != e.name));
            assert!(e.algorithms.contains(&e.algorithm));
            let mut p = RunParams::default();
            for (k, v) in e.defaults {
                p.set(k, v).unwrap_or_else(|err| panic!("{}: {err}", e.name));
            }
        }
        assert_eq!(CATALOG.len(), 11);
    }
}
