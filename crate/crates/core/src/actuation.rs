//! Roll motor timing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::scene::RollId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActuationError {
    #[error("motor parameter {0} must be positive and finite")]
    BadParameter(&'static str),
    #[error("length change must be finite")]
    NonFinite,
}

/// Stepper motor driving one roll's rod.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorSpec<T> {
    pub rpm: T,
    pub rod_radius: T,
    pub min_step: T,
}

impl<T: Scalar> Default for MotorSpec<T> {
    fn default() -> Self {
        Self {
            rpm: T::lit(20.0),
            rod_radius: T::lit(0.003),
            min_step: T::lit(0.001),
        }
    }
}

impl<T: Scalar> MotorSpec<T> {
    pub fn new(rpm: T, rod_radius: T, min_step: T) -> Result<Self, ActuationError> {
        let spec = Self {
            rpm,
            rod_radius,
            min_step,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ActuationError> {
        let ok = |v: T| v.is_finite() && v > T::zero();
        if !ok(self.rpm) {
            return Err(ActuationError::BadParameter("rpm"));
        }
        if !ok(self.rod_radius) {
            return Err(ActuationError::BadParameter("rod_radius"));
        }
        if !ok(self.min_step) {
            return Err(ActuationError::BadParameter("min_step"));
        }
        Ok(())
    }

    /// Strip travel per second (m/s).
    pub fn linear_speed(&self) -> T {
        T::TAU() * self.rod_radius * self.rpm / T::lit(60.0)
    }

    /// Seconds to change the exposed length by `delta`.
    pub fn move_time(&self, delta: T) -> Result<T, ActuationError> {
        if !delta.is_finite() {
            return Err(ActuationError::NonFinite);
        }
        Ok(delta.abs() / self.linear_speed())
    }

    /// Rolls on different rods move at once; the slowest one sets the time.
    pub fn parallel_move_time(&self, deltas: &[T]) -> Result<T, ActuationError> {
        deltas
            .iter()
            .try_fold(T::zero(), |acc, &d| Ok(acc.max(self.move_time(d)?)))
    }

    /// Rounds a length to the motor's step grid.
    pub fn quantize(&self, length: T) -> T {
        (length / self.min_step).round() * self.min_step
    }
}

/// Time for one sweep from `from` to `to` with `n_stops` measurement stops.
pub fn sweep_time<T: Scalar>(
    from: T,
    to: T,
    n_stops: u32,
    dwell_per_stop: T,
    motor: &MotorSpec<T>,
) -> Result<T, ActuationError> {
    Ok(motor.move_time(to - from)? + T::lit(n_stops as f64) * dwell_per_stop)
}

/// Running account of motor motion and measurement dwell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActuationLog {
    pub motion_seconds: f64,
    pub dwell_seconds: f64,
    pub moves: u64,
    pub stops: u64,
    pub travel: BTreeMap<RollId, f64>,
}

impl ActuationLog {
    pub fn total_seconds(&self) -> f64 {
        self.motion_seconds + self.dwell_seconds
    }

    pub fn record_move(
        &mut self,
        roll: RollId,
        from: f64,
        to: f64,
        motor: &MotorSpec<f64>,
    ) -> Result<f64, ActuationError> {
        self.record_parallel(motor, &[(roll, to - from)])
    }

    /// Records a set of simultaneous moves and returns the elapsed time.
    pub fn record_parallel(&mut self, motor: &MotorSpec<f64>, moves: &[(RollId, f64)]) -> Result<f64, ActuationError> {
        let deltas: Vec<f64> = moves.iter().map(|m| m.1).collect();
        let t = motor.parallel_move_time(&deltas)?;
        for &(roll, delta) in moves {
            if delta != 0.0 {
                *self.travel.entry(roll).or_default() += delta.abs();
                self.moves += 1;
            }
        }
        self.motion_seconds += t;
        Ok(t)
    }

    pub fn record_dwell(&mut self, seconds: f64) {
        self.dwell_seconds += seconds;
        self.stops += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_speed_and_full_unroll() {
        let m = MotorSpec::<f64>::default();
        // 2 pi * 3 mm * 20 / 60 s
        assert_relative_eq!(m.linear_speed(), 0.006283185307179587, max_relative = 1e-12);
        assert_relative_eq!(m.move_time(0.15).unwrap(), 23.873241463784303, max_relative = 1e-12);
    }

    #[test]
    fn move_time_is_symmetric_and_zero_at_rest() {
        let m = MotorSpec::<f64>::default();
        assert_eq!(m.move_time(0.0).unwrap(), 0.0);
        assert_eq!(m.move_time(0.04).unwrap(), m.move_time(-0.04).unwrap());
        assert!(m.move_time(f64::NAN).is_err());
    }

    #[test]
    fn time_scales_inversely_with_rpm() {
        let slow = MotorSpec::new(20.0, 0.003, 0.001).unwrap();
        let fast = MotorSpec::new(40.0, 0.003, 0.001).unwrap();
        let a = sweep_time(0.05, 0.09, 5, 0.0, &slow).unwrap();
        let b = sweep_time(0.05, 0.09, 5, 0.0, &fast).unwrap();
        assert_relative_eq!(a / b, 2.0, max_relative = 1e-12);
        let rpm80 = MotorSpec::new(80.0, 0.003, 0.001).unwrap();
        assert_relative_eq!(
            rpm80.move_time(0.14).unwrap() / slow.move_time(0.14).unwrap(),
            0.25,
            max_relative = 1e-12
        );
    }

    #[test]
    fn parallel_moves_take_the_longest() {
        let m = MotorSpec::<f64>::default();
        let t = m.parallel_move_time(&[0.01, -0.05, 0.02]).unwrap();
        assert_eq!(t, m.move_time(0.05).unwrap());
        assert_eq!(m.parallel_move_time(&[]).unwrap(), 0.0);
    }

    #[test]
    fn sweep_time_counts_dwell() {
        let m = MotorSpec::<f64>::default();
        assert_eq!(sweep_time(0.07, 0.07, 1, 0.5, &m).unwrap(), 0.5);
        // 0.04 m over 2 pi * 3 mm * (20 / 60) m/s, plus five half-second stops.
        let t = sweep_time(0.05, 0.09, 5, 0.5, &m).unwrap();
        assert!((t - 8.866).abs() < 1e-3, "{t}");
        let t2 = sweep_time(0.05, 0.09, 5, 1.0, &m).unwrap();
        assert_relative_eq!(t2 - t, 2.5, max_relative = 1e-12);
    }

    #[test]
    fn move_time_of_fourteen_cm() {
        let m = MotorSpec::<f64>::default();
        let by_hand = 0.14 / (2.0 * std::f64::consts::PI * 0.003 * (20.0 / 60.0));
        assert_relative_eq!(m.move_time(0.14).unwrap(), by_hand, max_relative = 1e-12);
        assert!((m.move_time(0.14).unwrap() - 22.28).abs() < 0.01);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(MotorSpec::new(0.0, 0.003, 0.001).is_err());
        assert!(MotorSpec::new(20.0, -1.0, 0.001).is_err());
        assert!(MotorSpec::new(20.0, 0.003, f64::INFINITY).is_err());
    }

    #[test]
    fn quantize_to_step() {
        let m = MotorSpec::<f64>::default();
        assert_relative_eq!(m.quantize(0.0654), 0.065, max_relative = 1e-12);
        assert_relative_eq!(m.quantize(0.0656), 0.066, max_relative = 1e-12);
    }

    #[test]
    fn works_in_f32() {
        let m = MotorSpec::<f32>::default();
        assert!((m.move_time(0.15).unwrap() - 23.873_241).abs() < 1e-3);
    }

    #[test]
    fn log_accumulates() {
        let m = MotorSpec::<f64>::default();
        let mut log = ActuationLog::default();
        let r0 = RollId::new(0, 0);
        let r1 = RollId::new(1, 0);
        log.record_parallel(&m, &[(r0, 0.04), (r1, 0.02)]).unwrap();
        log.record_move(r0, 0.05, 0.01, &m).unwrap();
        log.record_dwell(0.5);
        assert_eq!(log.moves, 3);
        assert_eq!(log.stops, 1);
        assert_relative_eq!(log.travel[&r0], 0.08, max_relative = 1e-12);
        assert_relative_eq!(
            log.motion_seconds,
            2.0 * m.move_time(0.04).unwrap(),
            max_relative = 1e-12
        );
        assert_relative_eq!(log.total_seconds(), log.motion_seconds + 0.5, max_relative = 1e-12);
    }
}
