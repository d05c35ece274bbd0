//! RSSI feedback model.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::scene::{Link, LinkId, RollId, Scene, SurfaceConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPolicy {
    /// Odd, so the median is one of the samples.
    pub samples_per_point: u32,
    pub noise_sigma_db: f64,
    /// Smallest change treated as real.
    pub noise_floor_margin_db: f64,
    pub quantum_db: f64,
    /// Constant receiver calibration offset added to every reading.
    pub rssi_offset_db: f64,
    /// Seconds spent collecting one median reading.
    pub dwell_s: f64,
}

impl Default for MeasurementPolicy {
    fn default() -> Self {
        Self {
            samples_per_point: 5,
            noise_sigma_db: 0.8,
            noise_floor_margin_db: 1.0,
            quantum_db: 1.0,
            rssi_offset_db: 0.0,
            dwell_s: 0.5,
        }
    }
}

impl MeasurementPolicy {
    pub fn noiseless() -> Self {
        Self {
            noise_sigma_db: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if self.samples_per_point == 0 || self.samples_per_point.is_multiple_of(2) {
            return Err(ControlError::BadParameter("samples_per_point must be odd and >= 1"));
        }
        if !(self.noise_sigma_db >= 0.0 && self.noise_sigma_db.is_finite()) {
            return Err(ControlError::BadParameter("noise_sigma_db must be finite and >= 0"));
        }
        if !(self.noise_floor_margin_db >= 0.0 && self.noise_floor_margin_db.is_finite()) {
            return Err(ControlError::BadParameter(
                "noise_floor_margin_db must be finite and >= 0",
            ));
        }
        if !(self.quantum_db >= 0.0 && self.quantum_db.is_finite()) {
            return Err(ControlError::BadParameter("quantum_db must be finite and >= 0"));
        }
        if !(self.dwell_s >= 0.0 && self.dwell_s.is_finite()) {
            return Err(ControlError::BadParameter("dwell_s must be finite and >= 0"));
        }
        if !self.rssi_offset_db.is_finite() {
            return Err(ControlError::BadParameter("rssi_offset_db must be finite"));
        }
        Ok(())
    }

    pub fn quantize(&self, dbm: f64) -> f64 {
        if self.quantum_db > 0.0 {
            (dbm / self.quantum_db).round() * self.quantum_db
        } else {
            dbm
        }
    }
}

/// One feedback reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RssiReport {
    pub link_id: LinkId,
    pub value_dbm: f64,
    pub epoch: u64,
    pub seq: u64,
}

/// Noiseless, unquantized received power (dBm) of `link` under `config`.
pub fn exact_rssi_dbm(scene: &Scene, link: &Link, config: &SurfaceConfig) -> Result<f64, ControlError> {
    let h = scene.total_channel(link, config)?;
    Ok(link.tx_power_dbm + 20.0 * h.norm().log10())
}

/// Median of `samples_per_point` noisy, quantized readings.
pub fn measure_rssi<R: Rng>(
    link: &Link,
    scene: &Scene,
    config: &SurfaceConfig,
    policy: &MeasurementPolicy,
    rng: &mut R,
) -> Result<f64, ControlError> {
    let h = scene.total_channel(link, config)?;
    Ok(noisy_median(link.tx_power_dbm + 20.0 * h.norm().log10(), policy, rng))
}

/// The reading a receiver reports for `link` at configuration epoch `epoch`:
/// a pure function of the run seed, the link, the epoch and the lengths.
pub fn reading_at_epoch(
    scene: &Scene,
    link: &Link,
    length_of: impl Fn(RollId) -> f64,
    policy: &MeasurementPolicy,
    run_seed: u64,
    epoch: u64,
) -> Result<f64, ControlError> {
    let tx = scene.endpoint(link.tx)?.position;
    let rx = scene.endpoint(link.rx)?.position;
    let h = scene.channel_between(link, tx, rx, length_of)?;
    let mut rng = seed::stream(run_seed, &[0x7251, link.id as u64, epoch]);
    Ok(noisy_median(
        link.tx_power_dbm + 20.0 * h.norm().log10(),
        policy,
        &mut rng,
    ))
}

fn noisy_median<R: Rng>(true_dbm: f64, policy: &MeasurementPolicy, rng: &mut R) -> f64 {
    let base = true_dbm + policy.rssi_offset_db;
    let n = policy.samples_per_point.max(1) as usize;
    let mut samples: Vec<f64> = if policy.noise_sigma_db > 0.0 {
        let noise = Normal::new(0.0, policy.noise_sigma_db).expect("validated sigma");
        (0..n).map(|_| policy.quantize(base + noise.sample(rng))).collect()
    } else {
        vec![policy.quantize(base); n]
    };
    samples.sort_by(f64::total_cmp);
    samples[n / 2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Preset, Scenario};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene() -> Scene {
        Scenario::with_frequencies(Preset::Setup1, vec![2.412e9])
            .build(1)
            .unwrap()
    }

    #[test]
    fn noiseless_off_is_rounded_direct_path() {
        let s = scene();
        let link = &s.links[0];
        let off = s.all_off();
        let direct = s.direct_term(link).unwrap();
        let expected = (link.tx_power_dbm + 20.0 * direct.norm().log10()).round();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = measure_rssi(link, &s, &off, &MeasurementPolicy::noiseless(), &mut rng).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn deterministic_for_seed() {
        let s = scene();
        let p = MeasurementPolicy::default();
        let a = measure_rssi(&s.links[0], &s, &s.all_off(), &p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = measure_rssi(&s.links[0], &s, &s.all_off(), &p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let cfg = s.all_off();
        let e1 = reading_at_epoch(&s, &s.links[0], |r| cfg.lengths[&r], &p, 4, 17).unwrap();
        let e2 = reading_at_epoch(&s, &s.links[0], |r| cfg.lengths[&r], &p, 4, 17).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn median_is_a_quantized_sample() {
        let p = MeasurementPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let v = noisy_median(-55.3, &p, &mut rng);
            assert_eq!(v, v.round());
            assert!((-55.3 - 6.0..=-55.3 + 6.0).contains(&v));
        }
    }

    #[test]
    fn median_lies_within_sample_range() {
        let p = MeasurementPolicy::default();
        let noise = Normal::new(0.0, p.noise_sigma_db).unwrap();
        for seed in 0..100 {
            let mut a = ChaCha8Rng::seed_from_u64(seed);
            let mut b = a.clone();
            let m = noisy_median(-60.0, &p, &mut a);
            let s: Vec<f64> = (0..5).map(|_| p.quantize(-60.0 + noise.sample(&mut b))).collect();
            let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(m >= lo && m <= hi);
        }
    }

    #[test]
    fn policy_validation() {
        assert!(MeasurementPolicy::default().validate().is_ok());
        let even = MeasurementPolicy {
            samples_per_point: 4,
            ..Default::default()
        };
        assert!(even.validate().is_err());
    }
}
