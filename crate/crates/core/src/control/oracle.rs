//! Exhaustive search over joint roll configurations, for checking the
//! greedy sweeps on small instances.

use num_complex::Complex64;

use super::state_space::mm_to_m;
use super::ControlError;
use crate::em;
use crate::scene::{build_default_panel, PanelFrame, RollId, Scenario, Scene, SceneError, StripSpec, SurfaceConfig};
use crate::Vec3;

/// Largest joint search the oracle will attempt.
pub const ORACLE_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub config: SurfaceConfig,
    /// Σ_l P_l / P_l,off at the optimum.
    pub objective: f64,
    pub evaluated: u64,
}

/// Σ over links of received power relative to all-off, plus whether every
/// link is at or above its all-off power. Noiseless and unquantized.
pub fn linear_objective(scene: &Scene, config: &SurfaceConfig) -> Result<(f64, bool), ControlError> {
    let off = scene.all_off();
    let mut total = 0.0;
    let mut feasible = true;
    for link in &scene.links {
        let p = scene.total_channel(link, config)?.norm_sqr();
        let p0 = scene.total_channel(link, &off)?.norm_sqr();
        total += p / p0;
        feasible &= p >= p0;
    }
    Ok((total, feasible))
}

/// Number of joint configurations, or `None` on overflow.
pub fn search_size(rolls: usize, options: usize) -> Option<u64> {
    (options as u64).checked_pow(u32::try_from(rolls).ok()?)
}

/// Best joint configuration over `{off} ∪ states_mm` for every roll,
/// maximising [`linear_objective`] among configurations that leave every
/// link at or above its all-off power.
pub fn brute_force_oracle(scene: &Scene, states_mm: &[u32]) -> Result<OracleResult, ControlError> {
    let mut rolls = scene.roll_ids();
    rolls.sort();
    let options = states_mm.len() + 1;
    let size = match search_size(rolls.len(), options) {
        Some(n) if n <= ORACLE_LIMIT => n,
        _ => {
            return Err(ControlError::SearchSpaceTooLarge {
                size: (options as f64).powi(rolls.len() as i32),
                limit: ORACLE_LIMIT,
            })
        }
    };

    // Rolls superpose linearly, so each (link, roll, option) term is computed once.
    let mut direct = Vec::new();
    let mut terms: Vec<Vec<Vec<Complex64>>> = Vec::new();
    for link in &scene.links {
        direct.push(scene.direct_term(link)?);
        let tx = scene.endpoint(link.tx)?.position;
        let rx = scene.endpoint(link.rx)?.position;
        let mut per_roll = Vec::new();
        for &id in &rolls {
            let roll = scene.roll(id).expect("listed roll");
            let mut per_opt = Vec::with_capacity(options);
            let lengths = std::iter::once(roll.off_length()).chain(states_mm.iter().map(|&mm| mm_to_m(mm)));
            for length in lengths {
                let refl = em::reflectivity(length, link.frequency, &scene.resonance);
                let mut h = Complex64::new(0.0, 0.0);
                if refl > 0.0 {
                    for (_, elem) in roll.element_positions_at(length) {
                        h += scene
                            .scatter
                            .scattered(tx, elem, rx, link.frequency, refl)
                            .map_err(SceneError::from)?;
                    }
                }
                per_opt.push(h);
            }
            per_roll.push(per_opt);
        }
        terms.push(per_roll);
    }
    let p_off: Vec<f64> = (0..scene.links.len())
        .map(|l| (direct[l] + terms[l].iter().map(|t| t[0]).sum::<Complex64>()).norm_sqr())
        .collect();

    let mut best_idx = 0u64;
    let mut best = f64::NEG_INFINITY;
    let mut digits = vec![0usize; rolls.len()];
    for idx in 0..size {
        let mut rem = idx;
        for d in digits.iter_mut() {
            *d = (rem % options as u64) as usize;
            rem /= options as u64;
        }
        let mut total = 0.0;
        let mut feasible = true;
        for l in 0..scene.links.len() {
            let h = direct[l]
                + digits
                    .iter()
                    .enumerate()
                    .map(|(r, &o)| terms[l][r][o])
                    .sum::<Complex64>();
            let ratio = h.norm_sqr() / p_off[l];
            feasible &= ratio >= 1.0;
            total += ratio;
        }
        if feasible && total > best {
            best = total;
            best_idx = idx;
        }
    }

    let mut config = scene.all_off();
    let mut rem = best_idx;
    for &id in &rolls {
        let o = (rem % options as u64) as usize;
        rem /= options as u64;
        if o > 0 {
            config.set(id, mm_to_m(states_mm[o - 1]));
        }
    }
    Ok(OracleResult {
        config,
        objective: best,
        evaluated: size,
    })
}

/// A single panel carrying only its top `n_rolls` rolls, with the scenario's
/// endpoints placed around it: small enough for the oracle.
pub fn tiny_instance(scenario: &Scenario, n_rolls: usize, seed: u64) -> Result<Scene, ControlError> {
    let strip = StripSpec::default();
    let off = crate::ResonanceModel::default().off_length;
    let mut panel = build_default_panel(0, PanelFrame::new(Vec3::new(0.0, 0.0, 1.2), 0.0), &strip, off);
    panel.rolls.truncate(n_rolls);
    Ok(scenario.build_with_panels(vec![panel], seed)?)
}

/// Ids of rolls differing between two configurations.
pub fn differing_rolls(a: &SurfaceConfig, b: &SurfaceConfig) -> Vec<RollId> {
    a.lengths
        .iter()
        .filter(|(id, l)| b.lengths.get(id) != Some(l))
        .map(|(&id, _)| id)
        .collect()
}
