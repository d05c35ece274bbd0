//! Surface design comparison: wideband, multi-design and frequency-tunable
//! element arrays under on/off phase-alignment control.
//!
//! Elements are abstract isotropic re-radiators (unit-aperture
//! normalisation, unit reflectivity) on a square grid centred on the `y = 0`
//! wall of a room. The controller knows every phase exactly.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{self, EmError};
use crate::{seed, Frequency, Position, Vec3};

/// Frequencies of the three-link study.
pub const STUDY_FREQUENCIES_HZ: [f64; 3] = [915e6, 2.4e9, 5.21e9];
/// Frequencies added one at a time for the element-count study.
pub const SCALING_FREQUENCIES_HZ: [f64; 4] = [915e6, 2.4e9, 5.21e9, 3.7e9];
/// Element pitch of tunable and multi-design arrays (m).
pub const BASE_SPACING: f64 = 0.03;
/// Largest grid side tried by [`elements_needed`].
pub const GRID_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    Wideband,
    MultiDesign,
    Tunable,
}

impl DesignKind {
    pub const ALL: [DesignKind; 3] = [DesignKind::Wideband, DesignKind::MultiDesign, DesignKind::Tunable];

    pub fn name(self) -> &'static str {
        match self {
            DesignKind::Wideband => "wideband",
            DesignKind::MultiDesign => "multi-design",
            DesignKind::Tunable => "tunable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayDesign {
    pub kind: DesignKind,
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
}

impl ArrayDesign {
    /// Square `n × n` array. Wideband elements are larger, so their pitch is
    /// twice `base_spacing`.
    pub fn square(kind: DesignKind, n: usize, base_spacing: f64) -> Self {
        let spacing = match kind {
            DesignKind::Wideband => 2.0 * base_spacing,
            _ => base_spacing,
        };
        Self {
            kind,
            rows: n,
            cols: n,
            spacing,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Element centres, row-major, on the `y = 0` plane around `centre`.
    pub fn positions(&self, centre: Position) -> Vec<Position> {
        let mut out = Vec::with_capacity(self.len());
        for r in 0..self.rows {
            for c in 0..self.cols {
                let dx = (c as f64 - (self.cols as f64 - 1.0) / 2.0) * self.spacing;
                let dz = (r as f64 - (self.rows as f64 - 1.0) / 2.0) * self.spacing;
                out.push(centre + Vec3::new(dx, 0.0, dz));
            }
        }
        out
    }
}

/// Room and array placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyGeometry {
    pub room: [f64; 3],
    /// Closest an endpoint may be to the array wall.
    pub min_wall_distance: f64,
    pub array_centre: [f64; 3],
}

impl Default for StudyGeometry {
    fn default() -> Self {
        Self {
            room: [10.0, 10.0, 3.0],
            min_wall_distance: 0.2,
            array_centre: [5.0, 0.0, 1.5],
        }
    }
}

impl StudyGeometry {
    pub fn centre(&self) -> Position {
        Vec3::new(self.array_centre[0], self.array_centre[1], self.array_centre[2])
    }

    fn sample_point<R: Rng>(&self, rng: &mut R) -> Position {
        Vec3::new(
            rng.random_range(0.0..=self.room[0]),
            rng.random_range(self.min_wall_distance..=self.room[1]),
            rng.random_range(0.0..=self.room[2]),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyLink {
    pub tx: Position,
    pub rx: Position,
    pub frequency: Frequency,
    /// Phase of the direct path at the receiver.
    pub direct_phase: f64,
}

impl StudyLink {
    pub fn direct_phasor(&self) -> Complex64 {
        Complex64::from_polar(1.0, self.direct_phase)
    }
}

/// Link `index` of trial `trial`. Each link has its own stream, so the
/// geometry of link `i` is the same however many links a trial has.
pub fn sample_link(
    geometry: &StudyGeometry,
    seed: u64,
    trial: u64,
    index: usize,
    frequency_hz: f64,
) -> Result<StudyLink, EmError> {
    let mut rng = seed::stream(seed, &[0xba5e, trial, index as u64]);
    let tx = geometry.sample_point(&mut rng);
    let rx = geometry.sample_point(&mut rng);
    let direct_phase = rng.random_range(0.0..std::f64::consts::TAU);
    Ok(StudyLink {
        tx,
        rx,
        frequency: Frequency::from_hz(frequency_hz)?,
        direct_phase,
    })
}

pub fn sample_links(geometry: &StudyGeometry, seed: u64, trial: u64, freqs: &[f64]) -> Result<Vec<StudyLink>, EmError> {
    freqs
        .iter()
        .enumerate()
        .map(|(i, &f)| sample_link(geometry, seed, trial, i, f))
        .collect()
}

/// What one element does after control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assignment {
    Off,
    /// Tuned to (or built for) one link's band.
    Serve(usize),
    /// Wideband element turned on: reflects every link.
    All,
}

impl Assignment {
    pub fn is_on(self) -> bool {
        self != Assignment::Off
    }

    pub fn serves(self, link: usize) -> bool {
        match self {
            Assignment::Off => false,
            Assignment::Serve(l) => l == link,
            Assignment::All => true,
        }
    }
}

/// Scattered contribution of every element to every link: `[link][element]`.
pub fn scatter_matrix(positions: &[Position], links: &[StudyLink]) -> Result<Vec<Vec<Complex64>>, EmError> {
    links
        .iter()
        .map(|l| {
            positions
                .iter()
                .map(|&e| em::scattered_amplitude(l.tx, e, l.rx, l.frequency, 1.0))
                .collect()
        })
        .collect()
}

/// On/off (and band) decision per element.
///
/// An element helps link `l` when its reflection has a positive projection
/// on the link's direct phasor. Tunable elements serve the link they align
/// with best; multi-design element `i` can only serve link `i mod k`;
/// wideband elements are on when the amplitude-weighted projection summed
/// over all links is positive.
pub fn rfocus_control(kind: DesignKind, scatter: &[Vec<Complex64>], links: &[StudyLink]) -> Vec<Assignment> {
    let k = links.len();
    let n = scatter.first().map_or(0, Vec::len);
    let proj = |l: usize, i: usize| (scatter[l][i] * links[l].direct_phasor().conj()).re;
    (0..n)
        .map(|i| match kind {
            DesignKind::Tunable => {
                let mut best: Option<(usize, f64)> = None;
                for (l, row) in scatter.iter().enumerate().take(k) {
                    let mag = row[i].norm();
                    if mag == 0.0 {
                        continue;
                    }
                    let cos = proj(l, i) / mag;
                    if cos > 0.0 && best.is_none_or(|(_, c)| cos > c) {
                        best = Some((l, cos));
                    }
                }
                best.map_or(Assignment::Off, |(l, _)| Assignment::Serve(l))
            }
            DesignKind::MultiDesign => {
                if k == 0 {
                    return Assignment::Off;
                }
                let l = i % k;
                if proj(l, i) > 0.0 {
                    Assignment::Serve(l)
                } else {
                    Assignment::Off
                }
            }
            DesignKind::Wideband => {
                if k > 0 && (0..k).map(|l| proj(l, i)).sum::<f64>() > 0.0 {
                    Assignment::All
                } else {
                    Assignment::Off
                }
            }
        })
        .collect()
}

/// Surface-only received power for `link` (dB, relative), `-inf` when no
/// element serves it.
pub fn delivered_power(link: usize, scatter: &[Vec<Complex64>], assignment: &[Assignment]) -> f64 {
    let sum: Complex64 = scatter[link]
        .iter()
        .zip(assignment)
        .filter(|(_, a)| a.serves(link))
        .map(|(s, _)| *s)
        .sum();
    20.0 * sum.norm().log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub trial: u64,
    pub seed: u64,
    pub kind: DesignKind,
    pub grid: usize,
    pub delivered_power_db: Vec<f64>,
    pub elements_on: usize,
    pub elements_total: usize,
}

/// Controls one array for one set of links and measures it.
pub fn evaluate(
    design: &ArrayDesign,
    geometry: &StudyGeometry,
    links: &[StudyLink],
    seed: u64,
    trial: u64,
) -> Result<StudyResult, EmError> {
    let positions = design.positions(geometry.centre());
    let scatter = scatter_matrix(&positions, links)?;
    let assignment = rfocus_control(design.kind, &scatter, links);
    Ok(StudyResult {
        trial,
        seed,
        kind: design.kind,
        grid: design.rows,
        delivered_power_db: (0..links.len())
            .map(|l| delivered_power(l, &scatter, &assignment))
            .collect(),
        elements_on: assignment.iter().filter(|a| a.is_on()).count(),
        elements_total: design.len(),
    })
}

/// `trials` independent trials in parallel, returned in trial order.
pub fn power_study(
    kind: DesignKind,
    n: usize,
    freqs: &[f64],
    trials: u64,
    seed: u64,
    geometry: &StudyGeometry,
) -> Result<Vec<StudyResult>, EmError> {
    let design = ArrayDesign::square(kind, n, BASE_SPACING);
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let links = sample_links(geometry, seed, t, freqs)?;
            evaluate(&design, geometry, &links, seed, t)
        })
        .collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    }
}

/// Median delivered power of each link over a set of results.
pub fn median_per_link(results: &[StudyResult]) -> Vec<f64> {
    let k = results.first().map_or(0, |r| r.delivered_power_db.len());
    (0..k)
        .map(|l| median(&mut results.iter().map(|r| r.delivered_power_db[l]).collect::<Vec<_>>()))
        .collect()
}

/// Median over every (trial, link) power sample.
pub fn pooled_median(results: &[StudyResult]) -> f64 {
    median(
        &mut results
            .iter()
            .flat_map(|r| r.delivered_power_db.iter().copied())
            .collect::<Vec<_>>(),
    )
}

/// Per-link target: median power of a 10 × 10 tunable array serving that
/// link alone, using the same per-link geometry as the multi-link trials.
pub fn baseline_targets(freqs: &[f64], trials: u64, seed: u64, geometry: &StudyGeometry) -> Result<Vec<f64>, EmError> {
    let design = ArrayDesign::square(DesignKind::Tunable, 10, BASE_SPACING);
    (0..freqs.len())
        .map(|l| {
            let results: Vec<StudyResult> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let link = sample_link(geometry, seed, t, l, freqs[l])?;
                    evaluate(&design, geometry, &[link], seed, t)
                })
                .collect::<Result<_, _>>()?;
            Ok(median_per_link(&results)[0])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementsNeeded {
    Count(usize),
    ExceedsCap(usize),
}

impl ElementsNeeded {
    pub fn count(self) -> Option<usize> {
        match self {
            ElementsNeeded::Count(n) => Some(n),
            ElementsNeeded::ExceedsCap(_) => None,
        }
    }
}

/// Smallest square array whose per-link median power meets every target.
pub fn elements_needed(
    kind: DesignKind,
    freqs: &[f64],
    targets: &[f64],
    trials: u64,
    seed: u64,
    geometry: &StudyGeometry,
    cap: usize,
) -> Result<ElementsNeeded, EmError> {
    for n in 1..=cap {
        let results = power_study(kind, n, freqs, trials, seed, geometry)?;
        let med = median_per_link(&results);
        if med.iter().zip(targets).all(|(m, t)| m >= t) {
            return Ok(ElementsNeeded::Count(n * n));
        }
    }
    Ok(ElementsNeeded::ExceedsCap(cap * cap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_link(phase: f64) -> StudyLink {
        StudyLink {
            tx: Vec3::new(5.0, 4.0, 1.5),
            rx: Vec3::new(5.0, 2.0, 1.5),
            frequency: Frequency::from_ghz(2.4).unwrap(),
            direct_phase: phase,
        }
    }

    #[test]
    fn wideband_pitch_is_doubled() {
        assert_eq!(ArrayDesign::square(DesignKind::Wideband, 4, 0.03).spacing, 0.06);
        assert_eq!(ArrayDesign::square(DesignKind::Tunable, 4, 0.03).spacing, 0.03);
        let p = ArrayDesign::square(DesignKind::Tunable, 3, 0.03).positions(Vec3::new(5.0, 0.0, 1.5));
        assert_eq!(p.len(), 9);
        assert!((p[4].x - 5.0).abs() < 1e-12 && (p[4].z - 1.5).abs() < 1e-12);
    }

    #[test]
    fn in_phase_on_antiphase_off() {
        let e = [Vec3::new(5.0, 0.0, 1.5)];
        let probe = line_link(0.0);
        let s = scatter_matrix(&e, &[probe]).unwrap();
        let phase = s[0][0].arg();
        for kind in DesignKind::ALL {
            let aligned = [line_link(phase)];
            let s = scatter_matrix(&e, &aligned).unwrap();
            assert!(rfocus_control(kind, &s, &aligned)[0].is_on());
            let anti = [line_link(phase + std::f64::consts::PI)];
            let s = scatter_matrix(&e, &anti).unwrap();
            assert!(!rfocus_control(kind, &s, &anti)[0].is_on());
        }
    }

    #[test]
    fn single_link_turns_on_about_half() {
        let g = StudyGeometry::default();
        let mut total = 0;
        let mut on = 0;
        for t in 0..20 {
            let links = sample_links(&g, 3, t, &[2.4e9]).unwrap();
            let r = evaluate(
                &ArrayDesign::square(DesignKind::Tunable, 30, BASE_SPACING),
                &g,
                &links,
                3,
                t,
            )
            .unwrap();
            total += r.elements_total;
            on += r.elements_on;
        }
        let frac = on as f64 / total as f64;
        assert!((0.45..=0.55).contains(&frac), "{frac}");
    }

    #[test]
    fn multi_design_partitions_evenly() {
        let g = StudyGeometry::default();
        let links = sample_links(&g, 1, 0, &STUDY_FREQUENCIES_HZ).unwrap();
        let pos = ArrayDesign::square(DesignKind::MultiDesign, 6, BASE_SPACING).positions(g.centre());
        let s = scatter_matrix(&pos, &links).unwrap();
        for (i, a) in rfocus_control(DesignKind::MultiDesign, &s, &links).iter().enumerate() {
            if let Assignment::Serve(l) = a {
                assert_eq!(*l, i % 3);
            }
        }
    }

    #[test]
    fn link_geometry_is_independent_of_link_count() {
        let g = StudyGeometry::default();
        let three = sample_links(&g, 9, 4, &SCALING_FREQUENCIES_HZ[..3]).unwrap();
        let four = sample_links(&g, 9, 4, &SCALING_FREQUENCIES_HZ).unwrap();
        assert_eq!(three[..], four[..3]);
    }

    #[test]
    fn median_power_grows_with_grid() {
        let g = StudyGeometry::default();
        for kind in DesignKind::ALL {
            let mut last = f64::NEG_INFINITY;
            for n in [5, 10, 20] {
                let m = pooled_median(&power_study(kind, n, &STUDY_FREQUENCIES_HZ, 60, 2, &g).unwrap());
                assert!(m >= last, "{kind:?} n={n}: {m} < {last}");
                last = m;
            }
        }
    }

    #[test]
    fn parallel_study_is_deterministic() {
        let g = StudyGeometry::default();
        let a = power_study(DesignKind::Tunable, 8, &STUDY_FREQUENCIES_HZ, 16, 5, &g).unwrap();
        let b = power_study(DesignKind::Tunable, 8, &STUDY_FREQUENCIES_HZ, 16, 5, &g).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().enumerate().all(|(i, r)| r.trial == i as u64));
    }

    proptest! {
        #[test]
        fn aligned_addition_never_shrinks(re in -1.0f64..1.0, im in -1.0f64..1.0, mag in 0.0f64..2.0, off in -1.5f64..1.5) {
            let s = Complex64::new(re, im);
            let e = Complex64::from_polar(mag, s.arg() + off);
            prop_assert!((s + e).norm() >= s.norm() * (1.0 - 1e-12));
        }
    }
}
