//! Executes one experiment and writes its outputs.
//!
//! Every run writes `manifest.toml` and `errors.csv`. Control experiments
//! also write `results.csv` (see [`ResultRow`]); each family adds its own
//! table, listed in the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use rollsurf_core::baselines::{self, DesignKind, ElementsNeeded, StudyGeometry};
use rollsurf_core::control::{
    cache_validate, reading_at_epoch, scene_links, Algorithm, ConfigCache, ControlError, ControlParams, Plant, Session,
    SimPlant, SweepOutcome,
};
use rollsurf_core::{seed, Scene, SurfaceConfig, Vec3};
use rollsurf_ctrlnet::{Deployment, LinkModel, NetConfig, Timeouts, TransportKind};
use sha2::{Digest, Sha256};

use crate::catalog::{Experiment, Family};
use crate::params::{RunParams, Transport};
use crate::spec::{AlgorithmChoice, ExperimentSpec};
use crate::ExpError;

/// One link of one trial.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub trial: u64,
    pub link_id: u32,
    pub frequency_hz: f64,
    pub baseline_dbm: f64,
    pub achieved_dbm: f64,
    /// Always `achieved_dbm - baseline_dbm`.
    pub gain_db: f64,
    /// Simulated actuation plus dwell time of the search.
    pub elapsed_s: f64,
    pub rolls_extended: usize,
    pub config_digest: String,
}

impl ResultRow {
    pub const HEADER: [&'static str; 10] = [
        "experiment",
        "trial",
        "link_id",
        "frequency_hz",
        "baseline_dbm",
        "achieved_dbm",
        "gain_db",
        "elapsed_s",
        "rolls_extended",
        "config_digest",
    ];

    fn record(&self) -> Vec<String> {
        vec![
            self.experiment.clone(),
            self.trial.to_string(),
            self.link_id.to_string(),
            self.frequency_hz.to_string(),
            self.baseline_dbm.to_string(),
            self.achieved_dbm.to_string(),
            self.gain_db.to_string(),
            self.elapsed_s.to_string(),
            self.rolls_extended.to_string(),
            self.config_digest.clone(),
        ]
    }
}

/// Short content hash of a configuration's roll lengths.
pub fn config_digest(cfg: &SurfaceConfig) -> String {
    let mut h = Sha256::new();
    for (r, l) in &cfg.lengths {
        h.update(format!("{r}={};", (l * 1000.0).round() as i64).as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(file: &'static str, header: &[&'static str]) -> Self {
        Self {
            file,
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$($x.to_string()),*] };
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub experiment: &'static str,
    pub algorithm: AlgorithmChoice,
    pub params: RunParams,
    pub rows: Vec<ResultRow>,
    pub tables: Vec<Table>,
    pub metrics: BTreeMap<String, f64>,
    pub failures: Vec<(u64, String)>,
    pub files: Vec<String>,
}

impl RunOutput {
    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn table(&self, file: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.file == file)
    }
}

struct Ctx<'a> {
    exp: &'static Experiment,
    algorithm: AlgorithmChoice,
    p: &'a RunParams,
    fixed_scene: Option<Scene>,
    out: &'a Path,
}

#[derive(Default)]
struct TrialOut {
    rows: Vec<ResultRow>,
    tables: BTreeMap<&'static str, Vec<Vec<String>>>,
    cache: Option<ConfigCache>,
}

impl TrialOut {
    fn add(&mut self, file: &'static str, row: Vec<String>) {
        self.tables.entry(file).or_default().push(row);
    }
}

impl Ctx<'_> {
    fn scene(&self, trial: u64, freqs: Vec<f64>) -> Result<Scene, String> {
        if let Some(s) = &self.fixed_scene {
            return Ok(s.clone());
        }
        let scenario = self.p.scenario.scenario(freqs).map_err(|e| e.to_string())?;
        scenario
            .build(seed::derive(self.p.seed, &[0x7e1a, trial]))
            .map_err(|e| e.to_string())
    }

    fn control(&self, trial: u64) -> ControlParams {
        self.p.control(seed::derive(self.p.seed, &[0xc0de, trial]))
    }

    fn net_config(&self, trial: u64) -> NetConfig {
        let n = &self.p.net;
        NetConfig {
            transport: TransportKind::Socket { port: n.port },
            link: LinkModel {
                latency: Duration::from_secs_f64(n.latency_ms / 1000.0),
                jitter: Duration::from_secs_f64(n.jitter_ms / 1000.0),
                loss: n.loss,
                seed: seed::derive(self.p.seed, &[0x4e7, trial]),
            },
            controllers: n.controllers,
            timeouts: Timeouts {
                feedback: Duration::from_secs_f64(n.feedback_timeout_s),
                ..Timeouts::default()
            },
            capture: n.capture.then(|| self.out.join(format!("capture-trial{trial}.log"))),
            ..NetConfig::default()
        }
    }

    fn search(&self, alg: Algorithm, scene: &Scene, cp: &ControlParams, trial: u64) -> Result<SweepOutcome, String> {
        match self.p.transport {
            Transport::Inproc => rollsurf_core::control::run_sim(alg, scene, cp).map_err(|e| e.to_string()),
            Transport::Socket => rollsurf_ctrlnet::run_distributed(alg, scene, cp, &self.net_config(trial))
                .map(|r| r.0)
                .map_err(|e| e.to_string()),
        }
    }

    fn primary(&self) -> Algorithm {
        match self.algorithm {
            AlgorithmChoice::Enumerate => Algorithm::Enumerate,
            _ => Algorithm::Group,
        }
    }

    fn rows(&self, trial: u64, scene: &Scene, out: &SweepOutcome) -> Vec<ResultRow> {
        let digest = config_digest(&out.config);
        let extended = out.extended().len();
        scene
            .links
            .iter()
            .zip(out.off_dbm.iter().zip(&out.final_dbm))
            .map(|(l, (&b, &a))| ResultRow {
                experiment: self.exp.name.into(),
                trial,
                link_id: l.id,
                frequency_hz: l.frequency.hz(),
                baseline_dbm: b,
                achieved_dbm: a,
                gain_db: a - b,
                elapsed_s: out.log.total_seconds(),
                rolls_extended: extended,
                config_digest: digest.clone(),
            })
            .collect()
    }

    fn freqs_for(&self, trial: u64) -> Vec<f64> {
        let all = &self.p.scenario.frequencies_hz;
        match self.exp.family {
            Family::SingleLink => vec![all[trial as usize % all.len()]],
            Family::ConcurrentLinks => {
                let c = &self.p.concurrent_links;
                let n = c.min + (trial as usize) % (c.max - c.min + 1);
                (0..n).map(|i| all[i % all.len()]).collect()
            }
            _ => all.clone(),
        }
    }

    fn trial(&self, trial: u64) -> Result<TrialOut, String> {
        let scene = self.scene(trial, self.freqs_for(trial))?;
        let cp = self.control(trial);
        let mut t = TrialOut::default();
        match self.exp.family {
            Family::SingleLink | Family::ConcurrentLinks => {
                let out = self.search(self.primary(), &scene, &cp, trial)?;
                t.rows = self.rows(trial, &scene, &out);
            }
            Family::RollLengths | Family::PanelDynamics => {
                let out = self.search(self.primary(), &scene, &cp, trial)?;
                t.rows = self.rows(trial, &scene, &out);
                if self.exp.family == Family::RollLengths {
                    for (r, len) in out.extended() {
                        t.add(
                            "roll_lengths.csv",
                            row![trial, r.panel, r.index, (len * 1000.0).round()],
                        );
                    }
                } else {
                    for p in &scene.panels {
                        let n = out.extended().iter().filter(|(r, _)| r.panel == p.id).count();
                        t.add("panel_counts.csv", row![trial, p.id, n]);
                    }
                }
            }
            Family::ConvergenceTime | Family::GroupSpeedup => {
                let e = self.search(Algorithm::Enumerate, &scene, &cp, trial)?;
                let g = self.search(Algorithm::Group, &scene, &cp, trial)?;
                t.rows = self.rows(trial, &scene, if self.primary() == Algorithm::Group { &g } else { &e });
                if self.exp.family == Family::ConvergenceTime {
                    for (name, o) in [("enumerate", &e), ("group", &g)] {
                        t.add(
                            "timing.csv",
                            row![
                                trial,
                                name,
                                o.log.total_seconds(),
                                o.log.motion_seconds,
                                o.log.dwell_seconds,
                                o.log.moves,
                                o.log.stops,
                                o.groups
                            ],
                        );
                    }
                } else {
                    let (te, tg) = (e.log.total_seconds(), g.log.total_seconds());
                    t.add("speedup.csv", row![trial, te, tg, tg / te]);
                }
            }
            Family::CacheReplay => self.cache_trial(trial, &scene, &cp, &mut t)?,
            Family::Perturbation => self.perturb_trial(trial, &scene, &cp, &mut t)?,
            Family::ElementsNeeded | Family::Power | Family::Utilization => unreachable!("studies run whole"),
        }
        Ok(t)
    }

    fn cache_trial(&self, trial: u64, scene: &Scene, cp: &ControlParams, t: &mut TrialOut) -> Result<(), String> {
        let out = self.search(Algorithm::Group, scene, cp, trial)?;
        let links = scene_links(scene).map_err(|e| e.to_string())?;
        let mut cache = ConfigCache {
            tolerance_m: self.p.cache.tolerance_m,
            ..ConfigCache::default()
        };
        let off = scene.rolls().next().map_or(0.01, |r| r.off_length());
        cache.store(&links, &out.config, off, &out.gains_db());
        let entry = cache.lookup(&links).ok_or("stored configuration not found")?.clone();
        let replay_params = self.p.control(seed::derive(self.p.seed, &[0xcace, trial]));
        let margin = self.p.policy.noise_floor_margin_db;
        let retain = self.p.cache.retain_fraction;
        let check = match self.p.transport {
            Transport::Inproc => {
                let plant = SimPlant::new(scene, replay_params.policy, replay_params.seed);
                validate_with(plant, scene, &replay_params, &entry, retain, margin)?.0
            }
            Transport::Socket => {
                let (dep, plant) = Deployment::start(
                    scene,
                    replay_params.policy,
                    replay_params.seed,
                    replay_params.motor,
                    &self.net_config(trial),
                )
                .map_err(|e| e.to_string())?;
                let (check, plant) = validate_with(plant, scene, &replay_params, &entry, retain, margin)?;
                dep.finish(plant).map_err(|e| e.to_string())?;
                check
            }
        };
        let digest = config_digest(&out.config);
        for (i, l) in scene.links.iter().enumerate() {
            let (orig, replay) = (out.gains_db()[i], check.gains_db[i]);
            t.add("cache.csv", row![trial, l.id, orig, replay, check.valid]);
            t.rows.push(ResultRow {
                experiment: self.exp.name.into(),
                trial,
                link_id: l.id,
                frequency_hz: l.frequency.hz(),
                baseline_dbm: check.off_dbm[i],
                achieved_dbm: check.replay_dbm[i],
                gain_db: check.replay_dbm[i] - check.off_dbm[i],
                elapsed_s: out.log.total_seconds(),
                rolls_extended: entry.rolls.len(),
                config_digest: digest.clone(),
            });
        }
        t.cache = Some(cache);
        Ok(())
    }

    fn perturb_trial(&self, trial: u64, scene: &Scene, cp: &ControlParams, t: &mut TrialOut) -> Result<(), String> {
        use rand::Rng;
        let out = self.search(self.primary(), scene, cp, trial)?;
        let mut moved = scene.clone();
        let mut rng = seed::stream(self.p.seed, &[0x7e27, trial]);
        for l in &scene.links {
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            let d = self.p.perturb_distance_m;
            let ep = moved.endpoint_mut(l.tx).map_err(|e| e.to_string())?;
            ep.position = ep.position + Vec3::new(d * ang.cos(), d * ang.sin(), 0.0);
        }
        let off = moved.all_off();
        let run_seed = seed::derive(self.p.seed, &[0x7e28, trial]);
        let digest = config_digest(&out.config);
        for (i, l) in moved.links.iter().enumerate() {
            let read = |cfg: &SurfaceConfig, epoch| {
                reading_at_epoch(
                    &moved,
                    l,
                    |r| cfg.length(r).unwrap_or(0.0),
                    &self.p.policy,
                    run_seed,
                    epoch,
                )
                .map_err(|e| e.to_string())
            };
            let (b, a) = (read(&off, 0)?, read(&out.config, 1)?);
            let before = out.gains_db()[i];
            t.add("perturbation.csv", row![trial, l.id, before, a - b, before - (a - b)]);
            t.rows.push(ResultRow {
                experiment: self.exp.name.into(),
                trial,
                link_id: l.id,
                frequency_hz: l.frequency.hz(),
                baseline_dbm: b,
                achieved_dbm: a,
                gain_db: a - b,
                elapsed_s: out.log.total_seconds(),
                rolls_extended: out.extended().len(),
                config_digest: digest.clone(),
            });
        }
        Ok(())
    }
}

fn validate_with<P: Plant>(
    plant: P,
    scene: &Scene,
    params: &ControlParams,
    entry: &rollsurf_core::control::CacheEntry,
    retain: f64,
    margin: f64,
) -> Result<(rollsurf_core::control::CacheCheck, P), String> {
    let mut session = Session::new(scene, plant, params).map_err(|e: ControlError| e.to_string())?;
    let check = cache_validate(&mut session, entry, scene, retain, margin).map_err(|e| e.to_string())?;
    Ok((check, session.into_plant()))
}

fn headers(family: Family) -> Vec<(&'static str, &'static [&'static str])> {
    match family {
        Family::RollLengths => vec![("roll_lengths.csv", &["trial", "panel", "roll", "length_mm"])],
        Family::PanelDynamics => vec![("panel_counts.csv", &["trial", "panel", "extended_rolls"])],
        Family::ConvergenceTime => vec![(
            "timing.csv",
            &[
                "trial",
                "algorithm",
                "total_s",
                "motion_s",
                "dwell_s",
                "moves",
                "stops",
                "groups",
            ],
        )],
        Family::GroupSpeedup => vec![("speedup.csv", &["trial", "enumerate_s", "group_s", "ratio"])],
        Family::CacheReplay => vec![(
            "cache.csv",
            &["trial", "link_id", "original_gain_db", "replay_gain_db", "valid"],
        )],
        Family::Perturbation => vec![(
            "perturbation.csv",
            &["trial", "link_id", "gain_before_db", "gain_after_db", "loss_db"],
        )],
        _ => vec![],
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    baselines::median(&mut v)
}

fn column(t: &Table, name: &str) -> Vec<f64> {
    let i = t.header.iter().position(|h| *h == name).expect("known column");
    t.rows.iter().filter_map(|r| r[i].parse().ok()).collect()
}

fn control_metrics(family: Family, rows: &[ResultRow], tables: &[Table], m: &mut BTreeMap<String, f64>) {
    let gains: Vec<f64> = rows.iter().map(|r| r.gain_db).collect();
    if !gains.is_empty() {
        m.insert("median_gain_db".into(), median(gains.clone()));
        m.insert(
            "max_gain_db".into(),
            gains.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        );
        m.insert(
            "min_gain_db".into(),
            gains.iter().copied().fold(f64::INFINITY, f64::min),
        );
    }
    let mut per_freq: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in rows {
        per_freq.entry(r.frequency_hz as u64).or_default().push(r.gain_db);
    }
    if family == Family::SingleLink {
        for (f, g) in per_freq {
            m.insert(format!("median_gain_db_{}mhz", f / 1_000_000), median(g));
        }
    }
    let get = |file: &str| tables.iter().find(|t| t.file == file);
    match family {
        Family::GroupSpeedup => {
            let r = column(get("speedup.csv").expect("table"), "ratio");
            if !r.is_empty() {
                m.insert("median_time_ratio".into(), median(r.clone()));
                m.insert(
                    "max_time_ratio".into(),
                    r.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                );
                m.insert("min_time_ratio".into(), r.iter().copied().fold(f64::INFINITY, f64::min));
            }
        }
        Family::ConvergenceTime => {
            let t = get("timing.csv").expect("table");
            for alg in ["enumerate", "group"] {
                let v: Vec<f64> = t
                    .rows
                    .iter()
                    .filter(|r| r[1] == alg)
                    .filter_map(|r| r[2].parse().ok())
                    .collect();
                if !v.is_empty() {
                    m.insert(format!("median_total_s_{alg}"), median(v));
                }
            }
        }
        Family::CacheReplay => {
            let t = get("cache.csv").expect("table");
            let (o, r) = (column(t, "original_gain_db"), column(t, "replay_gain_db"));
            let diff = o.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            m.insert("max_abs_replay_diff_db".into(), diff);
            let valid = t.rows.iter().filter(|r| r[4] == "true").count();
            if !t.rows.is_empty() {
                m.insert("valid_fraction".into(), valid as f64 / t.rows.len() as f64);
            }
        }
        Family::Perturbation => {
            let t = get("perturbation.csv").expect("table");
            let loss = column(t, "loss_db");
            if !loss.is_empty() {
                m.insert("median_loss_db".into(), median(loss));
                m.insert("median_gain_before_db".into(), median(column(t, "gain_before_db")));
            }
        }
        Family::RollLengths => {
            let l = column(get("roll_lengths.csv").expect("table"), "length_mm");
            m.insert("extended_rolls".into(), l.len() as f64);
            if !l.is_empty() {
                m.insert("median_length_mm".into(), median(l));
            }
        }
        Family::PanelDynamics => {
            let c = column(get("panel_counts.csv").expect("table"), "extended_rolls");
            if !c.is_empty() {
                m.insert("mean_extended_per_panel".into(), c.iter().sum::<f64>() / c.len() as f64);
            }
        }
        _ => {}
    }
}

fn run_study(ctx: &Ctx<'_>, metrics: &mut BTreeMap<String, f64>) -> Result<Vec<Table>, ExpError> {
    let p = ctx.p;
    let geom = StudyGeometry::default();
    let study = |e: rollsurf_core::em::EmError| ExpError::Study(e.to_string());
    match ctx.exp.family {
        Family::ElementsNeeded => {
            let mut t = Table::new(
                "elements_needed.csv",
                &["k", "design", "elements_needed", "exceeds_cap"],
            );
            for k in 1..=p.study.scaling_frequencies_hz.len() {
                let freqs = &p.study.scaling_frequencies_hz[..k];
                let targets = baselines::baseline_targets(freqs, p.trials, p.seed, &geom).map_err(study)?;
                for kind in DesignKind::ALL {
                    let need =
                        baselines::elements_needed(kind, freqs, &targets, p.trials, p.seed, &geom, p.study.grid_cap)
                            .map_err(study)?;
                    let (n, capped) = match need {
                        ElementsNeeded::Count(n) => (n, false),
                        ElementsNeeded::ExceedsCap(n) => (n, true),
                    };
                    metrics.insert(format!("elements_{}_k{k}", kind.name()), n as f64);
                    t.push(row![k, kind.name(), n, capped]);
                }
            }
            Ok(vec![t])
        }
        Family::Power | Family::Utilization => {
            let freqs = &p.study.frequencies_hz;
            let mut results = BTreeMap::new();
            for kind in DesignKind::ALL {
                results.insert(
                    kind.name(),
                    baselines::power_study(kind, p.study.grid, freqs, p.trials, p.seed, &geom).map_err(study)?,
                );
            }
            if ctx.exp.family == Family::Power {
                let mut t = Table::new("power.csv", &["design", "trial", "link", "frequency_hz", "power_db"]);
                let mut s = Table::new("power_summary.csv", &["design", "median_power_db"]);
                for kind in DesignKind::ALL {
                    let rs = &results[kind.name()];
                    for r in rs {
                        for (l, pw) in r.delivered_power_db.iter().enumerate() {
                            t.push(row![kind.name(), r.trial, l, freqs[l], pw]);
                        }
                    }
                    let med = baselines::pooled_median(rs);
                    metrics.insert(format!("median_power_db_{}", kind.name()), med);
                    s.push(row![kind.name(), med]);
                }
                let tun = metrics["median_power_db_tunable"];
                metrics.insert(
                    "tunable_minus_multi_db".into(),
                    tun - metrics["median_power_db_multi-design"],
                );
                metrics.insert(
                    "tunable_minus_wideband_db".into(),
                    tun - metrics["median_power_db_wideband"],
                );
                Ok(vec![t, s])
            } else {
                let mut t = Table::new("utilization.csv", &["design", "trial", "elements_on", "elements_total"]);
                for kind in DesignKind::ALL {
                    let rs = &results[kind.name()];
                    for r in rs {
                        t.push(row![kind.name(), r.trial, r.elements_on, r.elements_total]);
                    }
                    let on: Vec<f64> = rs.iter().map(|r| r.elements_on as f64).collect();
                    metrics.insert(format!("median_elements_on_{}", kind.name()), median(on));
                }
                let (tun, multi) = (&results["tunable"], &results["multi-design"]);
                let wins = tun
                    .iter()
                    .zip(multi)
                    .filter(|(a, b)| a.elements_on > b.elements_on)
                    .count();
                metrics.insert(
                    "tunable_beats_multi_fraction".into(),
                    wins as f64 / tun.len().max(1) as f64,
                );
                Ok(vec![t])
            }
        }
        _ => unreachable!("not a study"),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), ExpError> {
    let io = |e: csv::Error| ExpError::Io(path.to_path_buf(), e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| ExpError::Io(path.to_path_buf(), e.to_string()))
}

/// Code version recorded in manifests.
pub fn code_version() -> String {
    format!("rollsurf {}", env!("CARGO_PKG_VERSION"))
}

/// Runs `spec` with already-resolved parameters, writing into `out`.
pub fn run(spec: &ExperimentSpec, params: &RunParams, out: &Path) -> Result<RunOutput, ExpError> {
    let exp = spec.experiment()?;
    let algorithm = spec.algorithm()?;
    let fixed_scene = match &spec.scene {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ExpError::Io(path.clone(), e.to_string()))?;
            Some(Scene::from_toml(&text).map_err(|e| ExpError::Scene(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    std::fs::create_dir_all(out).map_err(|e| ExpError::Io(out.to_path_buf(), e.to_string()))?;
    let ctx = Ctx {
        exp,
        algorithm,
        p: params,
        fixed_scene,
        out,
    };
    let mut metrics = BTreeMap::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut cache = ConfigCache {
        tolerance_m: params.cache.tolerance_m,
        ..ConfigCache::default()
    };
    let tables = match exp.family {
        Family::ElementsNeeded | Family::Power | Family::Utilization => run_study(&ctx, &mut metrics)?,
        family => {
            let trial = |t: u64| (t, ctx.trial(t));
            let sequential = params.transport == Transport::Socket && params.net.port != 0;
            let results: Vec<(u64, Result<TrialOut, String>)> = if sequential {
                (0..params.trials).map(trial).collect()
            } else {
                (0..params.trials).into_par_iter().map(trial).collect()
            };
            let mut tables: Vec<Table> = headers(family).into_iter().map(|(f, h)| Table::new(f, h)).collect();
            for (t, r) in results {
                match r {
                    Ok(out) => {
                        rows.extend(out.rows);
                        for (file, mut rs) in out.tables {
                            let table = tables.iter_mut().find(|x| x.file == file).expect("declared table");
                            table.rows.append(&mut rs);
                        }
                        if let Some(c) = out.cache {
                            cache.entries.extend(c.entries);
                        }
                    }
                    Err(e) => failures.push((t, e)),
                }
            }
            control_metrics(family, &rows, &tables, &mut metrics);
            tables
        }
    };
    metrics.insert("trials_failed".into(), failures.len() as f64);

    let mut files = Vec::new();
    if !matches!(exp.family, Family::ElementsNeeded | Family::Power | Family::Utilization) {
        let recs: Vec<Vec<String>> = rows.iter().map(ResultRow::record).collect();
        write_csv(&out.join("results.csv"), &ResultRow::HEADER, &recs)?;
        files.push("results.csv".to_string());
    }
    for t in &tables {
        write_csv(&out.join(t.file), &t.header, &t.rows)?;
        files.push(t.file.to_string());
    }
    let errs: Vec<Vec<String>> = failures.iter().map(|(t, e)| row![t, e]).collect();
    write_csv(&out.join("errors.csv"), &["trial", "error"], &errs)?;
    files.push("errors.csv".into());
    if exp.family == Family::CacheReplay {
        cache
            .save(&out.join("cache.toml"))
            .map_err(|e| ExpError::Io(out.join("cache.toml"), e.to_string()))?;
        files.push("cache.toml".into());
    }
    if params.transport == Transport::Socket && params.net.capture {
        for t in 0..params.trials {
            let f = format!("capture-trial{t}.log");
            if out.join(&f).exists() {
                files.push(f);
            }
        }
    }
    files.push("manifest.toml".into());

    let output = RunOutput {
        experiment: exp.name,
        algorithm,
        params: params.clone(),
        rows,
        tables,
        metrics,
        failures,
        files,
    };
    let manifest = manifest(spec, &output);
    std::fs::write(out.join("manifest.toml"), manifest)
        .map_err(|e| ExpError::Io(out.join("manifest.toml"), e.to_string()))?;
    Ok(output)
}

fn manifest(spec: &ExperimentSpec, o: &RunOutput) -> String {
    let mut m = toml::Table::new();
    m.insert("experiment".into(), o.experiment.into());
    m.insert("algorithm".into(), o.algorithm.name().into());
    m.insert("code_version".into(), code_version().into());
    m.insert("seed".into(), (o.params.seed as i64).into());
    m.insert("trials".into(), (o.params.trials as i64).into());
    let scene = match &spec.scene {
        Some(p) => p.display().to_string(),
        None => format!("random {}", o.params.scenario.preset),
    };
    m.insert("scene".into(), scene.into());
    m.insert(
        "files".into(),
        toml::Value::Array(o.files.iter().map(|f| f.clone().into()).collect()),
    );
    m.insert(
        "params".into(),
        toml::Value::try_from(&o.params).expect("params serialize"),
    );
    let metrics: toml::Table = o.metrics.iter().map(|(k, v)| (k.clone(), (*v).into())).collect();
    m.insert("metrics".into(), metrics.into());
    if !o.failures.is_empty() {
        let f: toml::Table = o
            .failures
            .iter()
            .map(|(t, e)| (format!("trial{t}"), e.clone().into()))
            .collect();
        m.insert("failures".into(), f.into());
    }
    toml::to_string(&m).expect("manifest serializes")
}

/// Where a run writes when neither the spec nor the command line says.
pub fn default_out(exp: &str) -> PathBuf {
    PathBuf::from("out").join(exp)
}

/// Resolves the chosen roll length of every extended roll into mm, for
/// callers comparing configurations.
pub fn extended_mm(cfg: &SurfaceConfig, off_m: f64) -> BTreeMap<String, u32> {
    cfg.lengths
        .iter()
        .filter(|(_, &l)| l > off_m + 1e-9)
        .map(|(r, &l)| (r.to_string(), rollsurf_core::control::m_to_mm(l)))
        .collect()
}
