//! Candidate roll lengths per frequency band.
//!
//! Lengths are held as whole millimetres so every consumer, local or remote,
//! derives bit-identical metre values via [`mm_to_m`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::em::SPEED_OF_LIGHT;
use crate::Frequency;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Band {
    Mhz900,
    Ghz2_4,
    Ghz3_7,
    Ghz5,
    /// Built around the half-wave length of a frequency outside the table.
    Synthetic,
}

struct BandRow {
    band: Band,
    low_hz: f64,
    high_hz: f64,
    first_mm: u32,
    last_mm: u32,
    step_mm: u32,
}

const TABLE: [BandRow; 4] = [
    BandRow {
        band: Band::Mhz900,
        low_hz: 860e6,
        high_hz: 960e6,
        first_mm: 100,
        last_mm: 160,
        step_mm: 10,
    },
    BandRow {
        band: Band::Ghz2_4,
        low_hz: 2.4e9,
        high_hz: 2.5e9,
        first_mm: 50,
        last_mm: 90,
        step_mm: 10,
    },
    BandRow {
        band: Band::Ghz3_7,
        low_hz: 3.3e9,
        high_hz: 4.2e9,
        first_mm: 20,
        last_mm: 50,
        step_mm: 5,
    },
    BandRow {
        band: Band::Ghz5,
        low_hz: 5.15e9,
        high_hz: 5.85e9,
        first_mm: 15,
        last_mm: 40,
        step_mm: 5,
    },
];

/// Half-width of a synthetic space relative to its centre length.
pub const SYNTHETIC_SPAN: f64 = 0.25;

impl Band {
    pub fn of(f: Frequency) -> Band {
        TABLE
            .iter()
            .find(|r| f.hz() >= r.low_hz && f.hz() <= r.high_hz)
            .map_or(Band::Synthetic, |r| r.band)
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Band::Mhz900 => "900MHz",
            Band::Ghz2_4 => "2.4GHz",
            Band::Ghz3_7 => "3.7GHz",
            Band::Ghz5 => "5GHz",
            Band::Synthetic => "synthetic",
        })
    }
}

pub fn mm_to_m(mm: u32) -> f64 {
    mm as f64 / 1000.0
}

pub fn m_to_mm(m: f64) -> u32 {
    (m * 1000.0).round().max(0.0) as u32
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthStateSpace {
    pub band: Band,
    /// Ascending, distinct.
    pub lengths_mm: Vec<u32>,
}

impl LengthStateSpace {
    pub fn lengths(&self) -> Vec<f64> {
        self.lengths_mm.iter().map(|&mm| mm_to_m(mm)).collect()
    }

    pub fn len(&self) -> usize {
        self.lengths_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths_mm.is_empty()
    }

    /// Sorted union of several spaces.
    pub fn union<'a>(spaces: impl IntoIterator<Item = &'a LengthStateSpace>) -> LengthStateSpace {
        let mut bands = Vec::new();
        let mut lengths = Vec::new();
        for s in spaces {
            bands.push(s.band);
            lengths.extend_from_slice(&s.lengths_mm);
        }
        lengths.sort_unstable();
        lengths.dedup();
        bands.sort();
        bands.dedup();
        let band = if bands.len() == 1 { bands[0] } else { Band::Synthetic };
        LengthStateSpace {
            band,
            lengths_mm: lengths,
        }
    }

    /// Drops lengths outside `(off, max]`.
    pub fn clipped(mut self, off_mm: u32, max_mm: u32) -> LengthStateSpace {
        self.lengths_mm.retain(|&l| l > off_mm && l <= max_mm);
        self
    }
}

/// Candidate lengths for `f` within roll bounds `(off_mm, max_mm]`.
///
/// Tabulated bands return their table entry. Other frequencies get lengths
/// on the nearest band's step, centred on the rounded half-wave length and
/// within ±25 % of it.
pub fn state_space_for(f: Frequency, off_mm: u32, max_mm: u32) -> LengthStateSpace {
    if let Some(row) = TABLE.iter().find(|r| f.hz() >= r.low_hz && f.hz() <= r.high_hz) {
        let lengths_mm = (row.first_mm..=row.last_mm).step_by(row.step_mm as usize).collect();
        return LengthStateSpace {
            band: row.band,
            lengths_mm,
        }
        .clipped(off_mm, max_mm);
    }
    let half_wave = SPEED_OF_LIGHT / (2.0 * f.hz());
    let centre = (half_wave * 1000.0).round() as i64;
    let nearest = TABLE
        .iter()
        .min_by(|a, b| {
            let da = (f.hz() - (a.low_hz + a.high_hz) / 2.0).abs();
            let db = (f.hz() - (b.low_hz + b.high_hz) / 2.0).abs();
            da.total_cmp(&db)
        })
        .expect("table not empty");
    let step = nearest.step_mm as i64;
    let lo = half_wave * 1000.0 * (1.0 - SYNTHETIC_SPAN);
    let hi = half_wave * 1000.0 * (1.0 + SYNTHETIC_SPAN);
    let k_lo = ((lo - centre as f64) / step as f64).ceil() as i64;
    let k_hi = ((hi - centre as f64) / step as f64).floor() as i64;
    let lengths_mm: Vec<u32> = (k_lo..=k_hi)
        .map(|k| centre + k * step)
        .filter(|&l| l > off_mm as i64 && l <= max_mm as i64)
        .map(|l| l as u32)
        .collect();
    let lengths_mm = if lengths_mm.is_empty() {
        vec![max_mm]
    } else {
        lengths_mm
    };
    LengthStateSpace {
        band: Band::Synthetic,
        lengths_mm,
    }
}

/// Union of the spaces of every frequency.
pub fn joint_state_space(freqs: &[Frequency], off_mm: u32, max_mm: u32) -> LengthStateSpace {
    let spaces: Vec<_> = freqs.iter().map(|&f| state_space_for(f, off_mm, max_mm)).collect();
    LengthStateSpace::union(&spaces)
}
