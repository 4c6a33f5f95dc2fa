//! Gray-labelled constellations with unit average energy.
//!
//! Bits are booleans with `true ≡ +1`. A label packs the bits of one symbol
//! with bit `n` at position `n`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Bpsk,
    Qpsk,
    #[serde(rename = "8psk")]
    Psk8,
    #[serde(rename = "16qam")]
    Qam16,
}

/// Per-axis 4-PAM level for a bit pair: `(+,+) → 1`, `(+,−) → 3`,
/// `(−,+) → −1`, `(−,−) → −3`.
fn pam4(first: bool, second: bool) -> f64 {
    match (first, second) {
        (true, true) => 1.0,
        (true, false) => 3.0,
        (false, true) => -1.0,
        (false, false) => -3.0,
    }
}

fn sign(b: bool) -> f64 {
    if b {
        1.0
    } else {
        -1.0
    }
}

impl Modulation {
    pub const ALL: [Modulation; 4] = [Modulation::Bpsk, Modulation::Qpsk, Modulation::Psk8, Modulation::Qam16];

    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
            Modulation::Psk8 => 3,
            Modulation::Qam16 => 4,
        }
    }

    pub fn order(self) -> usize {
        1 << self.bits_per_symbol()
    }

    /// Constellation point of a label.
    pub fn point(self, label: usize) -> C64 {
        let bit = |n: usize| label_bit(label, n);
        match self {
            Modulation::Bpsk => C64::new(sign(bit(0)), 0.0),
            Modulation::Qpsk => C64::new(sign(bit(0)), sign(bit(1))) * FRAC_1_SQRT_2,
            Modulation::Psk8 => {
                // position on the circle whose Gray code is the label
                let mut pos = label;
                let mut shift = label >> 1;
                while shift != 0 {
                    pos ^= shift;
                    shift >>= 1;
                }
                C64::from_polar(1.0, 2.0 * PI * pos as f64 / 8.0)
            }
            Modulation::Qam16 => C64::new(pam4(bit(0), bit(1)), pam4(bit(2), bit(3))) / 10f64.sqrt(),
        }
    }

    /// All points indexed by label.
    pub fn points(self) -> Vec<C64> {
        (0..self.order()).map(|l| self.point(l)).collect()
    }

    pub fn label(self, bits: &[bool]) -> usize {
        debug_assert_eq!(bits.len(), self.bits_per_symbol());
        bits.iter().enumerate().map(|(n, &b)| (b as usize) << n).sum()
    }

    /// Maps a bit stream to symbols; the length must be a multiple of the
    /// bits per symbol.
    pub fn map(self, bits: &[bool]) -> Result<Vec<C64>> {
        let m = self.bits_per_symbol();
        if !bits.len().is_multiple_of(m) {
            return Err(Error::InvalidInput(format!("{} bits do not fill {m}-bit symbols", bits.len())));
        }
        Ok(bits.chunks(m).map(|c| self.point(self.label(c))).collect())
    }
}

pub fn label_bit(label: usize, n: usize) -> bool {
    (label >> n) & 1 == 1
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            "qpsk" | "4qam" => Ok(Modulation::Qpsk),
            "8psk" | "psk8" => Ok(Modulation::Psk8),
            "16qam" | "qam16" => Ok(Modulation::Qam16),
            _ => Err(Error::InvalidInput(format!("unknown modulation `{s}`"))),
        }
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Qpsk => "qpsk",
            Modulation::Psk8 => "8psk",
            Modulation::Qam16 => "16qam",
        };
        f.write_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_energy_and_bijective() {
        for m in Modulation::ALL {
            let pts = m.points();
            let e: f64 = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / pts.len() as f64;
            assert!((e - 1.0).abs() < 1e-12, "{m}");
            for i in 0..pts.len() {
                for j in 0..i {
                    assert!((pts[i] - pts[j]).norm() > 1e-6, "{m}: {i} and {j} coincide");
                }
            }
        }
    }

    #[test]
    fn nearest_neighbours_differ_in_one_bit() {
        for m in Modulation::ALL {
            let pts = m.points();
            let dmin = (0..pts.len())
                .flat_map(|i| (0..i).map(move |j| (i, j)))
                .map(|(i, j)| (pts[i] - pts[j]).norm())
                .fold(f64::INFINITY, f64::min);
            for i in 0..pts.len() {
                for j in 0..i {
                    if (pts[i] - pts[j]).norm() < dmin + 1e-9 {
                        assert_eq!((i ^ j).count_ones(), 1, "{m}: labels {i} and {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn fixed_labels() {
        assert_eq!(Modulation::Bpsk.point(1), C64::new(1.0, 0.0));
        assert_eq!(Modulation::Bpsk.point(0), C64::new(-1.0, 0.0));
        let s = 10f64.sqrt();
        assert_eq!(Modulation::Qam16.point(0b0011), C64::new(1.0 / s, -3.0 / s));
        assert_eq!(Modulation::Qam16.point(0b1101), C64::new(3.0 / s, 1.0 / s));
        assert!((Modulation::Psk8.point(0) - C64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn map_checks_length() {
        assert!(Modulation::Qpsk.map(&[true]).is_err());
        let s = Modulation::Qpsk.map(&[true, false, false, true]).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s[0].re > 0.0 && s[0].im < 0.0);
        assert_eq!("16QAM".parse::<Modulation>().unwrap(), Modulation::Qam16);
        assert!("64qam".parse::<Modulation>().is_err());
    }
}
