//! Channel model, surface geometry, motor timing and roll-length control for
//! a frequency-tunable reflective surface built from rollable strips.
//!
//! The channel math ([`em`]) and motor timing ([`actuation`]) are generic over
//! [`Scalar`]; everything above them works in `f64`. The aliases at the crate
//! root fix the scalar to `f64`.

pub mod actuation;
pub mod baselines;
pub mod control;
pub mod em;
pub mod scalar;
pub mod scene;
pub mod seed;

pub use num_complex::Complex64;
pub use scalar::Scalar;

pub type Frequency = em::Frequency<f64>;
pub type Vec3 = em::Vec3<f64>;
pub type Position = em::Position<f64>;
pub type ResonanceModel = em::ResonanceModel<f64>;
pub type ScatterModel = em::ScatterModel<f64>;
pub type ScatterAperture = em::ScatterAperture<f64>;
pub type MotorSpec = actuation::MotorSpec<f64>;

pub use actuation::ActuationLog;
pub use scene::{Link, LinkId, RollId, Scene, SurfaceConfig};
