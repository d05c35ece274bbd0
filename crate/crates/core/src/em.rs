//! Complex-amplitude channel math.
//!
//! Every function here is a pure function of its arguments and generic over
//! the [`Scalar`] type. Amplitudes are narrowband phasors normalised so that
//! a free-space link at distance `d` has magnitude `lambda / (4 pi d)`.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Lower edge of the simulation validity envelope (Hz).
pub const MIN_FREQUENCY_HZ: f64 = 100.0e6;
/// Upper edge of the simulation validity envelope (Hz).
pub const MAX_FREQUENCY_HZ: f64 = 10.0e9;

/// Narrowband complex field amplitude.
pub type ComplexAmplitude<T> = Complex<T>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmError {
    #[error("frequency {0} Hz outside the 100 MHz..10 GHz envelope")]
    FrequencyOutOfRange(f64),
    #[error("length must be positive, got {0} m")]
    NonPositiveLength(f64),
    #[error("coincident points at distance {0} m")]
    CoincidentPoints(f64),
    #[error("reflectivity {0} outside [0, 1]")]
    ReflectivityOutOfRange(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid resonance model: {0}")]
    InvalidResonanceModel(&'static str),
}

/// Carrier frequency, validated against the simulation envelope.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Frequency<T>(T);

impl<T: Scalar> Frequency<T> {
    pub fn from_hz(hz: T) -> Result<Self, EmError> {
        if !hz.is_finite() {
            return Err(EmError::NonFinite("frequency"));
        }
        if hz < T::lit(MIN_FREQUENCY_HZ) || hz > T::lit(MAX_FREQUENCY_HZ) {
            return Err(EmError::FrequencyOutOfRange(hz.as_f64()));
        }
        Ok(Self(hz))
    }

    pub fn from_mhz(mhz: T) -> Result<Self, EmError> {
        Self::from_hz(mhz * T::lit(1.0e6))
    }

    pub fn from_ghz(ghz: T) -> Result<Self, EmError> {
        Self::from_hz(ghz * T::lit(1.0e9))
    }

    pub fn hz(self) -> T {
        self.0
    }

    pub fn wavelength(self) -> T {
        wavelength(self)
    }
}

impl TryFrom<f64> for Frequency<f64> {
    type Error = EmError;

    fn try_from(hz: f64) -> Result<Self, Self::Error> {
        Frequency::from_hz(hz)
    }
}

impl From<Frequency<f64>> for f64 {
    fn from(f: Frequency<f64>) -> f64 {
        f.0
    }
}

impl Serialize for Frequency<f64> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Frequency<f64> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let hz = f64::deserialize(d)?;
        Frequency::from_hz(hz).map_err(serde::de::Error::custom)
    }
}

/// Point or direction in 3-D space (meters).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

/// Geometric position (meters).
pub type Position<T> = Vec3<T>;

impl<T: Scalar> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Self) -> T {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn normalized(self) -> Self {
        self * (T::one() / self.norm())
    }
}

impl<T: Scalar> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Scalar> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

/// `lambda = c / f`.
pub fn wavelength<T: Scalar>(f: Frequency<T>) -> T {
    T::lit(SPEED_OF_LIGHT) / f.hz()
}

/// Half-wave resonance `c / (2 L)` without the envelope check.
pub fn half_wave_resonance_hz<T: Scalar>(length: T) -> T {
    T::lit(SPEED_OF_LIGHT) / (T::lit(2.0) * length)
}

/// Resonant frequency of a half-wave strip of the given exposed length.
pub fn resonant_frequency<T: Scalar>(length: T) -> Result<Frequency<T>, EmError> {
    if !length.is_finite() {
        return Err(EmError::NonFinite("length"));
    }
    if length <= T::zero() {
        return Err(EmError::NonPositiveLength(length.as_f64()));
    }
    Frequency::from_hz(half_wave_resonance_hz(length))
}

/// Parametric power-reflectivity curve of one strip.
///
/// The curve is a Lorentzian in frequency centred on the half-wave
/// resonance: `peak / (1 + ((f - f_res) / (B f_res / 2))^2)` where `B` is
/// the fractional full width at half maximum. Strips at or below
/// `off_length` do not reflect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceModel<T> {
    pub peak_reflectivity: T,
    pub fractional_bandwidth: T,
    pub off_length: T,
}

impl<T: Scalar> Default for ResonanceModel<T> {
    fn default() -> Self {
        Self {
            peak_reflectivity: T::lit(0.99),
            fractional_bandwidth: T::lit(0.10),
            off_length: T::lit(0.01),
        }
    }
}

impl<T: Scalar> ResonanceModel<T> {
    pub fn new(peak_reflectivity: T, fractional_bandwidth: T, off_length: T) -> Result<Self, EmError> {
        let model = Self {
            peak_reflectivity,
            fractional_bandwidth,
            off_length,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), EmError> {
        if !(self.peak_reflectivity > T::zero() && self.peak_reflectivity <= T::one()) {
            return Err(EmError::InvalidResonanceModel("peak_reflectivity must be in (0, 1]"));
        }
        if !(self.fractional_bandwidth > T::zero() && self.fractional_bandwidth < T::one()) {
            return Err(EmError::InvalidResonanceModel("fractional_bandwidth must be in (0, 1)"));
        }
        if !(self.off_length >= T::zero() && self.off_length.is_finite()) {
            return Err(EmError::InvalidResonanceModel(
                "off_length must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Power reflectivity of a strip with `length` exposed, at frequency `f`.
pub fn reflectivity<T: Scalar>(length: T, f: Frequency<T>, model: &ResonanceModel<T>) -> T {
    // Also catches NaN lengths.
    if length.partial_cmp(&model.off_length) != Some(std::cmp::Ordering::Greater) {
        return T::zero();
    }
    let f_res = half_wave_resonance_hz(length);
    let half_width = model.fractional_bandwidth * f_res / T::lit(2.0);
    let x = (f.hz() - f_res) / half_width;
    model.peak_reflectivity / (T::one() + x * x)
}

/// Free-space direct path: magnitude `lambda / (4 pi d)`, phase `-2 pi d / lambda`.
pub fn direct_amplitude<T: Scalar>(
    tx: Position<T>,
    rx: Position<T>,
    f: Frequency<T>,
) -> Result<ComplexAmplitude<T>, EmError> {
    let d = checked_distance(tx, rx)?;
    let lambda = wavelength(f);
    let magnitude = lambda / (T::lit(4.0) * T::PI() * d);
    Ok(Complex::from_polar(magnitude, -T::TAU() * d / lambda))
}

/// Re-radiation strength of one element.
///
/// Both variants are written as a radar cross-section `sigma` and enter the
/// bistatic amplitude as `sqrt(4 pi sigma) / lambda` on top of the two-hop
/// Friis product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScatterAperture<T> {
    /// Fixed `4 pi` m^2 cross-section, i.e. the `4 pi / lambda` factor of
    /// [`scattered_amplitude`]. Used by the array comparison study.
    UnitAperture,
    /// Cross-section proportional to the square of the wavelength, as for a
    /// resonant half-wave dipole (`~0.86 lambda^2`).
    ResonantDipole { rcs_per_wavelength_sq: T },
}

impl<T: Scalar> ScatterAperture<T> {
    pub fn dipole() -> Self {
        ScatterAperture::ResonantDipole {
            rcs_per_wavelength_sq: T::lit(0.86),
        }
    }

    /// Multiplier applied to the two-hop Friis product.
    pub fn factor(&self, lambda: T) -> T {
        match *self {
            ScatterAperture::UnitAperture => T::lit(4.0) * T::PI() / lambda,
            ScatterAperture::ResonantDipole { rcs_per_wavelength_sq } => {
                (T::lit(4.0) * T::PI() * rcs_per_wavelength_sq).sqrt()
            }
        }
    }
}

/// Element scattering model: aperture plus a fixed reflection phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterModel<T> {
    pub aperture: ScatterAperture<T>,
    pub reflection_phase: T,
}

impl<T: Scalar> Default for ScatterModel<T> {
    fn default() -> Self {
        Self {
            aperture: ScatterAperture::dipole(),
            reflection_phase: T::PI(),
        }
    }
}

impl<T: Scalar> ScatterModel<T> {
    pub fn unit_aperture() -> Self {
        Self {
            aperture: ScatterAperture::UnitAperture,
            reflection_phase: T::PI(),
        }
    }

    pub fn scattered(
        &self,
        tx: Position<T>,
        elem: Position<T>,
        rx: Position<T>,
        f: Frequency<T>,
        refl: T,
    ) -> Result<ComplexAmplitude<T>, EmError> {
        if !(refl >= T::zero() && refl <= T::one()) {
            return Err(EmError::ReflectivityOutOfRange(refl.as_f64()));
        }
        let d1 = checked_distance(tx, elem)?;
        let d2 = checked_distance(elem, rx)?;
        if refl == T::zero() {
            return Ok(Complex::new(T::zero(), T::zero()));
        }
        let lambda = wavelength(f);
        let four_pi = T::lit(4.0) * T::PI();
        let magnitude =
            refl.sqrt() * (lambda / (four_pi * d1)) * (lambda / (four_pi * d2)) * self.aperture.factor(lambda);
        let phase = -T::TAU() * (d1 + d2) / lambda + self.reflection_phase;
        Ok(Complex::from_polar(magnitude, phase))
    }
}

/// Isotropic re-radiator with the `4 pi / lambda` unit-aperture normalisation.
pub fn scattered_amplitude<T: Scalar>(
    tx: Position<T>,
    elem: Position<T>,
    rx: Position<T>,
    f: Frequency<T>,
    refl: T,
) -> Result<ComplexAmplitude<T>, EmError> {
    ScatterModel::unit_aperture().scattered(tx, elem, rx, f, refl)
}

/// Where a channel term came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PathVia<Id> {
    Direct,
    Element(Id),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathContribution<T, Id> {
    pub amplitude: ComplexAmplitude<T>,
    pub via: PathVia<Id>,
}

/// Coherent sum of a set of path contributions.
pub fn superpose<T: Scalar, Id>(paths: &[PathContribution<T, Id>]) -> ComplexAmplitude<T> {
    paths
        .iter()
        .fold(Complex::new(T::zero(), T::zero()), |acc, p| acc + p.amplitude)
}

fn checked_distance<T: Scalar>(a: Position<T>, b: Position<T>) -> Result<T, EmError> {
    if !a.is_finite() || !b.is_finite() {
        return Err(EmError::NonFinite("position"));
    }
    let d = a.distance(b);
    if d <= T::lit(1.0e-9) {
        return Err(EmError::CoincidentPoints(d.as_f64()));
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ghz(x: f64) -> Frequency<f64> {
        Frequency::from_ghz(x).unwrap()
    }

    #[test]
    fn wavelength_examples() {
        assert_relative_eq!(wavelength(ghz(0.915)), 0.32764, max_relative = 1e-4);
        assert_relative_eq!(wavelength(ghz(2.4)), 0.12491, max_relative = 1e-4);
        assert_relative_eq!(wavelength(ghz(5.21)), 0.05754, max_relative = 1e-4);
        assert_eq!(wavelength(ghz(2.4)), SPEED_OF_LIGHT / 2.4e9);
    }

    #[test]
    fn frequency_envelope() {
        assert!(matches!(
            Frequency::from_hz(99.0e6),
            Err(EmError::FrequencyOutOfRange(_))
        ));
        assert!(matches!(
            Frequency::from_hz(10.1e9),
            Err(EmError::FrequencyOutOfRange(_))
        ));
        assert!(Frequency::from_hz(f64::NAN).is_err());
        assert!(Frequency::from_hz(100.0e6).is_ok());
        assert!(Frequency::from_hz(10.0e9).is_ok());
    }

    #[test]
    fn resonant_frequency_examples() {
        assert_relative_eq!(resonant_frequency(0.164).unwrap().hz(), 914.0e6, max_relative = 1e-3);
        assert_relative_eq!(resonant_frequency(0.0625).unwrap().hz(), 2.398e9, max_relative = 1e-3);
        assert_relative_eq!(resonant_frequency(0.02877).unwrap().hz(), 5.210e9, max_relative = 1e-3);
        assert!(matches!(resonant_frequency(0.0), Err(EmError::NonPositiveLength(_))));
        assert!(matches!(resonant_frequency(-0.1), Err(EmError::NonPositiveLength(_))));
    }

    #[test]
    fn reflectivity_examples() {
        let m = ResonanceModel::default();
        assert_eq!(reflectivity(0.01, ghz(2.4), &m), 0.0);
        let f_res = half_wave_resonance_hz(0.0625);
        let on = reflectivity(0.0625, Frequency::from_hz(f_res).unwrap(), &m);
        assert_relative_eq!(on, 0.99, max_relative = 1e-12);
        for sign in [-1.0, 1.0] {
            let f = Frequency::from_hz(f_res * (1.0 + sign * m.fractional_bandwidth / 2.0)).unwrap();
            assert_relative_eq!(reflectivity(0.0625, f, &m), 0.495, max_relative = 1e-9);
        }
    }

    #[test]
    fn reflectivity_unimodal_dense_scan() {
        let m = ResonanceModel::default();
        for &length in &[0.015, 0.03, 0.0625, 0.09, 0.16] {
            let f_res = half_wave_resonance_hz(length);
            let mut prev = -1.0;
            let mut rising = true;
            let mut peak_hz = 0.0;
            let mut peak = -1.0;
            let mut hz = MIN_FREQUENCY_HZ;
            while hz <= MAX_FREQUENCY_HZ {
                let r = reflectivity(length, Frequency::from_hz(hz).unwrap(), &m);
                assert!((0.0..=1.0).contains(&r));
                if r > peak {
                    peak = r;
                    peak_hz = hz;
                }
                if rising && r < prev {
                    rising = false;
                }
                if !rising {
                    assert!(r <= prev, "second rise at {hz} Hz for L={length}");
                }
                prev = r;
                hz += 1.0e6;
            }
            if f_res <= MAX_FREQUENCY_HZ {
                assert!((peak_hz - f_res).abs() <= 1.0e6, "peak {peak_hz} vs {f_res}");
            }
        }
    }

    #[test]
    fn frequency_selectivity_2g4_roll_at_5g() {
        let m = ResonanceModel::default();
        for mm in 50..=90 {
            let r = reflectivity(mm as f64 / 1000.0, ghz(5.21), &m);
            assert!(r < 0.05, "L={mm} mm gives {r}");
        }
    }

    #[test]
    fn direct_amplitude_properties() {
        let f = ghz(2.4);
        let lambda = wavelength(f);
        let tx = Vec3::new(0.0, 0.0, 0.0);
        let h = direct_amplitude(tx, Vec3::new(lambda, 0.0, 0.0), f).unwrap();
        assert_relative_eq!(h.norm(), 1.0 / (4.0 * std::f64::consts::PI), max_relative = 1e-12);
        assert!(h.arg().abs() < 1e-9);

        let rx = Vec3::new(1.3, -0.4, 2.0);
        let h1 = direct_amplitude(tx, rx, f).unwrap();
        let h2 = direct_amplitude(tx, rx * 2.0, f).unwrap();
        assert_relative_eq!(h2.norm(), h1.norm() / 2.0, max_relative = 1e-12);
        assert_eq!(direct_amplitude(rx, tx, f).unwrap(), h1);
        assert!(matches!(direct_amplitude(tx, tx, f), Err(EmError::CoincidentPoints(_))));
    }

    #[test]
    fn scattered_amplitude_properties() {
        let f = ghz(2.4);
        let lambda = wavelength(f);
        let tx = Vec3::new(0.0, 0.0, 0.0);
        let rx = Vec3::new(lambda, 0.0, 0.0);
        let mid = Vec3::new(lambda / 2.0, 0.0, 0.0);
        assert_eq!(scattered_amplitude(tx, mid, rx, f, 0.0).unwrap().norm(), 0.0);

        let s = scattered_amplitude(tx, mid, rx, f, 1.0).unwrap();
        // -2 pi (lambda) / lambda + pi == pi (mod 2 pi)
        assert_relative_eq!(s.arg().abs(), std::f64::consts::PI, max_relative = 1e-9);
        let d = lambda / 2.0;
        let expect = (lambda / (4.0 * std::f64::consts::PI * d)).powi(2) * (4.0 * std::f64::consts::PI / lambda);
        assert_relative_eq!(s.norm(), expect, max_relative = 1e-12);

        let elem = Vec3::new(0.3, 0.7, -0.2);
        let a = scattered_amplitude(tx, elem, rx, f, 0.7).unwrap();
        let b = scattered_amplitude(rx, elem, tx, f, 0.7).unwrap();
        assert_eq!(a, b);
        assert!(scattered_amplitude(tx, tx, rx, f, 1.0).is_err());
        assert!(matches!(
            scattered_amplitude(tx, elem, rx, f, 1.5),
            Err(EmError::ReflectivityOutOfRange(_))
        ));
    }

    #[test]
    fn scattered_vanishes_far_away() {
        let f = ghz(2.4);
        let model = ScatterModel::default();
        let elem = Vec3::new(0.0, 0.0, 0.0);
        let rx = Vec3::new(0.0, 1.0, 0.0);
        let mut last = f64::INFINITY;
        for k in 1..8 {
            let tx = Vec3::new(10f64.powi(k), 0.0, 0.0);
            let m = model.scattered(tx, elem, rx, f, 1.0).unwrap().norm();
            assert!(m < last);
            last = m;
        }
        assert!(last < 1e-9);
    }

    #[test]
    fn dipole_aperture_ratio_falls_with_frequency() {
        let model = ScatterModel::default();
        let tx = Vec3::new(5.0, 0.0, 0.0);
        let rx = Vec3::new(0.0, 0.35, 0.0);
        let elem = Vec3::zero();
        let ratio = |f: Frequency<f64>| {
            model.scattered(tx, elem, rx, f, 1.0).unwrap().norm() / direct_amplitude(tx, rx, f).unwrap().norm()
        };
        assert!(ratio(ghz(0.915)) > ratio(ghz(2.4)));
        assert!(ratio(ghz(2.4)) > ratio(ghz(5.21)));
    }

    #[test]
    fn generic_over_f32() {
        let f = Frequency::<f32>::from_ghz(2.4).unwrap();
        assert!((wavelength(f) - 0.124_91).abs() < 1e-4);
        let l = wavelength(f) / 2.0;
        let back = resonant_frequency(l).unwrap();
        assert!((back.hz() - f.hz()).abs() / f.hz() < 1e-6);
        let h = direct_amplitude(Vec3::<f32>::zero(), Vec3::new(1.0, 0.0, 0.0), f).unwrap();
        assert!(h.norm() > 0.0);
    }
}
