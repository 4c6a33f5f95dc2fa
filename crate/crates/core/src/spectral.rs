//! Complex tap sequences and their samples on a uniform frequency grid.
//!
//! Every `(1/2π)∫ · dω` over one period is realized as the mean over a
//! [`FrequencyGrid`] of `N` uniformly spaced points `ω_n = −π + 2πn/N`.
//! The transform uses the positive-exponent convention
//! `H(ω) = Σ_ℓ h_ℓ e^{jωℓ}` throughout.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Default grid size for rate evaluation.
pub const RATE_GRID_POINTS: usize = 4096;
/// Default grid size inside optimizer loops.
pub const DESIGN_GRID_POINTS: usize = 1024;

/// A finite complex filter with an explicit delay origin.
///
/// `taps[i]` sits at delay `i - origin`, so a causal filter has origin 0 and a
/// filter whose first tap is at delay `d` has origin `-d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapVector {
    taps: Vec<C64>,
    origin: isize,
}

impl TapVector {
    pub fn new(taps: Vec<C64>, origin: isize) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidInput("tap vector must have at least one tap".into()));
        }
        if taps.iter().any(|t| !t.re.is_finite() || !t.im.is_finite()) {
            return Err(Error::InvalidInput("tap vector contains non-finite values".into()));
        }
        Ok(Self { taps, origin })
    }

    /// Causal filter, first tap at delay 0.
    pub fn causal(taps: Vec<C64>) -> Result<Self> {
        Self::new(taps, 0)
    }

    /// Filter whose first tap sits at `first_delay`.
    pub fn starting_at(taps: Vec<C64>, first_delay: isize) -> Result<Self> {
        Self::new(taps, -first_delay)
    }

    pub fn from_real(taps: &[f64]) -> Result<Self> {
        Self::causal(taps.iter().map(|&t| C64::new(t, 0.0)).collect())
    }

    pub fn impulse() -> Self {
        Self { taps: vec![C64::new(1.0, 0.0)], origin: 0 }
    }

    pub fn zeros(len: usize, first_delay: isize) -> Result<Self> {
        Self::starting_at(vec![C64::new(0.0, 0.0); len], first_delay)
    }

    pub fn taps(&self) -> &[C64] {
        &self.taps
    }

    pub fn origin(&self) -> isize {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn first_delay(&self) -> isize {
        -self.origin
    }

    pub fn last_delay(&self) -> isize {
        self.first_delay() + self.taps.len() as isize - 1
    }

    /// Tap at a given delay, zero outside the support.
    pub fn at_delay(&self, delay: isize) -> C64 {
        let idx = delay + self.origin;
        if idx < 0 || idx as usize >= self.taps.len() {
            C64::new(0.0, 0.0)
        } else {
            self.taps[idx as usize]
        }
    }

    /// `(delay, tap)` pairs in increasing delay order.
    pub fn iter_delays(&self) -> impl Iterator<Item = (isize, C64)> + '_ {
        let first = self.first_delay();
        self.taps.iter().enumerate().map(move |(i, &t)| (first + i as isize, t))
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t.norm_sqr()).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { taps: self.taps.iter().map(|&t| t * s).collect(), origin: self.origin }
    }

    pub fn max_abs_diff(&self, other: &TapVector) -> f64 {
        let lo = self.first_delay().min(other.first_delay());
        let hi = self.last_delay().max(other.last_delay());
        (lo..=hi)
            .map(|d| (self.at_delay(d) - other.at_delay(d)).norm())
            .fold(0.0, f64::max)
    }
}

/// Uniform grid `ω_n = −π + 2πn/N`, `n = 0..N`, covering exactly one period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    n_points: usize,
}

impl FrequencyGrid {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::InvalidInput("frequency grid needs at least 2 points".into()));
        }
        Ok(Self { n_points })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn omega(&self, n: usize) -> f64 {
        -PI + 2.0 * PI * n as f64 / self.n_points as f64
    }

    pub fn omegas(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |n| self.omega(n))
    }

    /// Checks the grid is fine enough for filters of the given length.
    pub fn supports(&self, filter_len: usize) -> bool {
        self.n_points >= 2 * filter_len
    }
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self { n_points: RATE_GRID_POINTS }
    }
}

/// Complex samples of a transform on a [`FrequencyGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: FrequencyGrid,
    values: Vec<C64>,
}

impl Spectrum {
    pub fn new(grid: FrequencyGrid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::InvalidInput(format!(
                "spectrum has {} values for a {}-point grid",
                values.len(),
                grid.n_points()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: FrequencyGrid, mut f: impl FnMut(f64) -> C64) -> Self {
        let values = grid.omegas().map(&mut f).collect();
        Self { grid, values }
    }

    pub fn constant(grid: FrequencyGrid, c: C64) -> Self {
        Self { grid, values: vec![c; grid.n_points()] }
    }

    pub fn grid(&self) -> FrequencyGrid {
        self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Pointwise combination of two spectra on the same grid.
    pub fn zip_with(&self, other: &Spectrum, f: impl Fn(C64, C64) -> C64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self { grid: self.grid, values }
    }

    pub fn abs_sqr(&self) -> Self {
        self.map(|v| C64::new(v.norm_sqr(), 0.0))
    }
}

/// Samples `Σ_ℓ taps_ℓ e^{jω_n ℓ}` on the grid.
pub fn dtft(taps: &TapVector, grid: FrequencyGrid) -> Spectrum {
    let values = grid
        .omegas()
        .map(|w| taps.iter_delays().map(|(d, t)| t * C64::cis(w * d as f64)).sum())
        .collect();
    Spectrum { grid, values }
}

/// Riemann-sum inverse transform `tap_ℓ = (1/N) Σ_n S(ω_n) e^{−jω_n ℓ}` over `index_range`.
pub fn idtft(spectrum: &Spectrum, index_range: RangeInclusive<isize>) -> Result<TapVector> {
    let (lo, hi) = (*index_range.start(), *index_range.end());
    if hi < lo {
        return Err(Error::InvalidInput("empty index range".into()));
    }
    let grid = spectrum.grid;
    let inv_n = 1.0 / grid.n_points() as f64;
    let taps = (lo..=hi)
        .map(|l| {
            spectrum
                .values
                .iter()
                .enumerate()
                .map(|(n, &v)| v * C64::cis(-grid.omega(n) * l as f64))
                .sum::<C64>()
                * inv_n
        })
        .collect();
    TapVector::starting_at(taps, lo)
}

/// Grid mean, i.e. `(1/2π)∫_{−π}^{π} S(ω) dω`.
pub fn mean_integral(spectrum: &Spectrum) -> C64 {
    spectrum.values.iter().sum::<C64>() / spectrum.values.len() as f64
}

/// Linear convolution; the output origin is the sum of the input origins.
pub fn convolve(a: &TapVector, b: &TapVector) -> TapVector {
    let mut out = vec![C64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, &x) in a.taps.iter().enumerate() {
        for (j, &y) in b.taps.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    TapVector { taps: out, origin: a.origin + b.origin }
}

/// Index range of a centered two-sided FIR with `len` taps.
pub fn centered_range(len: usize) -> RangeInclusive<isize> {
    let len = len.max(1) as isize;
    let lo = -(len / 2);
    lo..=lo + len - 1
}
