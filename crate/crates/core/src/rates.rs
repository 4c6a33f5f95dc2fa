//! Capacity, linear MMSE error, HOM rate bounds and the rate report that
//! collects every shortener's achievable rate at one SNR point.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::channel::{min_phase_response, split_target, Cir};
use crate::design::{
    design_hom, epsilon_terms, milb_spectra, optimize_fom, optimize_ubm, sigma_advisory_bound, ChannelSpectra,
    DesignOptions, HomFilters,
};
use crate::error::Result;
use crate::spectral::{FrequencyGrid, TapVector, C64};

/// `mean ln(1 + |H|²/N0)`, nats/symbol.
pub fn capacity(cir: &Cir, grid: FrequencyGrid) -> f64 {
    let cs = ChannelSpectra::new(cir, grid);
    ChannelSpectra::mean(&cs.h2.iter().map(|a| (a / cs.n0).ln_1p()).collect::<Vec<_>>())
}

/// Per-symbol error of the linear MMSE estimator, `−mean M(ω)`.
pub fn delta_mse(cir: &Cir, grid: FrequencyGrid) -> f64 {
    -ChannelSpectra::mean(&ChannelSpectra::new(cir, grid).m)
}

fn spectrum_sq(t: Option<&TapVector>, grid: FrequencyGrid) -> Vec<f64> {
    match t {
        Some(t) => crate::spectral::dtft(t, grid).values().iter().map(|v| v.norm_sqr()).collect(),
        None => vec![0.0; grid.n_points()],
    }
}

/// HOM rate bounds: feedback errors treated as noise (lower) and perfect
/// feedback (upper). Inputs are already scaled by `1/√N0`.
pub fn hom_bounds(h_f: &TapVector, h_b: Option<&TapVector>, grid: FrequencyGrid) -> (f64, f64) {
    let f2 = spectrum_sq(Some(h_f), grid);
    let b2 = spectrum_sq(h_b, grid);
    let lower = ChannelSpectra::mean(&f2.iter().zip(&b2).map(|(f, b)| (f / (1.0 + b)).ln_1p()).collect::<Vec<_>>());
    let upper = ChannelSpectra::mean(&f2.iter().map(|f| f.ln_1p()).collect::<Vec<_>>());
    (lower, upper)
}

/// MILB of the HOM filters with the all-pass prefilter taken as exact, so
/// that `W·H` is the minimum-phase response and `|W|²(N0+|H|²) = 1+|H̃|²`.
pub fn hom_milb(cir: &Cir, hom: &HomFilters, sigma: f64, grid: FrequencyGrid) -> f64 {
    let cs = ChannelSpectra::new(cir, grid);
    let fv = cs.eval_taps(&hom.h_f);
    let bv = hom.h_b.as_ref().map_or_else(|| vec![C64::new(0.0, 0.0); cs.n()], |b| cs.eval_taps(b));
    let wh: Vec<C64> = fv.iter().zip(&bv).map(|(f, b)| f + b).collect();
    let w2: Vec<f64> = wh.iter().zip(&cs.h2).map(|(t, h2)| (1.0 + t.norm_sqr()) / (cs.n0 + h2)).collect();
    milb_spectra(&cs, &wh, &w2, &fv, &bv, sigma)
}

/// Left-hand side of the feedback-rate corollary at `σ = 1` with the HOM
/// target, `eps1† eps2⁻¹ eps1 − mean(M(1+|H_f|²))`; it never exceeds 1.
pub fn corollary_check(cir: &Cir, nu: usize, opts: &DesignOptions) -> Result<f64> {
    let cs = ChannelSpectra::new(cir, opts.grid);
    let (h_f, _) = split_target(&min_phase_response(cir, opts.min_phase.fft_size)?, nu)?;
    let q = epsilon_terms(&cs, h_f.taps(), nu, 1.0).quadratic_form()?;
    let fv = cs.eval_taps(&h_f);
    let m_term = ChannelSpectra::mean(&fv.iter().zip(&cs.m).map(|(f, m)| m * (1.0 + f.norm_sqr())).collect::<Vec<_>>());
    Ok(q - m_term)
}

/// Every shortener rate at one channel and SNR, in nats/symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub snr_db: f64,
    pub nu: usize,
    pub c: f64,
    pub i_hom_l: f64,
    pub i_hom: f64,
    pub i_hom_u: f64,
    pub i_fom0: f64,
    pub i_fom1: f64,
    pub i_ubm: f64,
    pub delta_mse: f64,
    pub sigma_bound: f64,
    pub corollary_lhs: f64,
    pub ubm_stationarity: f64,
    pub fom0_converged: bool,
    pub fom1_converged: bool,
}

/// One inequality of the rate ordering, `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateInequality {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
}

impl RateInequality {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

impl RateReport {
    /// The computable ordering between the rates.
    pub fn inequalities(&self) -> Vec<RateInequality> {
        let ineq = |name, lhs, rhs| RateInequality { name, lhs, rhs };
        vec![
            ineq("i_hom_l <= i_hom", self.i_hom_l, self.i_hom),
            ineq("i_hom <= i_fom0", self.i_hom, self.i_fom0),
            ineq("i_fom0 <= i_ubm", self.i_fom0, self.i_ubm),
            ineq("i_ubm <= c", self.i_ubm, self.c),
            ineq("i_hom <= i_hom_u", self.i_hom, self.i_hom_u),
            ineq("i_hom_u <= i_fom1", self.i_hom_u, self.i_fom1),
            ineq("corollary_lhs <= 1", self.corollary_lhs, 1.0),
            ineq("i_fom0 / i_ubm <= 1", self.i_fom0 / self.i_ubm, 1.0),
        ]
    }

    /// Inequalities whose slack is below `-tol`.
    pub fn violations(&self, tol: f64) -> Vec<RateInequality> {
        self.inequalities().into_iter().filter(|i| i.slack() < -tol).collect()
    }

    pub fn rates(&self) -> [f64; 7] {
        [self.c, self.i_hom_l, self.i_hom, self.i_hom_u, self.i_fom0, self.i_fom1, self.i_ubm]
    }

    /// Same report with every rate converted to bits.
    pub fn in_bits(&self) -> Self {
        let k = std::f64::consts::LOG2_E;
        Self {
            c: self.c * k,
            i_hom_l: self.i_hom_l * k,
            i_hom: self.i_hom * k,
            i_hom_u: self.i_hom_u * k,
            i_fom0: self.i_fom0 * k,
            i_fom1: self.i_fom1 * k,
            i_ubm: self.i_ubm * k,
            ..self.clone()
        }
    }
}

/// Designs every shortener at memory `nu` and evaluates its rate.
pub fn rate_report(cir: &Cir, nu: usize, opts: &DesignOptions) -> Result<RateReport> {
    let grid = opts.grid;
    let hom = design_hom_lenient(cir, nu, opts)?;
    let (i_hom_l, i_hom_u) = hom_bounds(&hom.h_f, hom.h_b.as_ref(), grid);
    let fom0 = optimize_fom(cir, nu, 0.0, opts)?;
    let fom1 = optimize_fom(cir, nu, 1.0, opts)?;
    let ubm = optimize_ubm(cir, nu, opts)?;
    let delta = delta_mse(cir, grid);
    Ok(RateReport {
        snr_db: cir.snr_db(),
        nu,
        c: capacity(cir, grid),
        i_hom_l,
        i_hom: hom_milb(cir, &hom, 0.0, grid),
        i_hom_u,
        i_fom0: fom0.milb,
        i_fom1: fom1.milb,
        i_ubm: ubm.milb,
        delta_mse: delta,
        sigma_bound: sigma_advisory_bound(delta),
        corollary_lhs: corollary_check(cir, nu, opts)?,
        ubm_stationarity: ubm.stationarity,
        fom0_converged: fom0.converged,
        fom1_converged: fom1.converged,
    })
}

/// The rates only need the minimum-phase response, so the all-pass
/// truncation check is relaxed here.
fn design_hom_lenient(cir: &Cir, nu: usize, opts: &DesignOptions) -> Result<HomFilters> {
    let mut mp = opts.min_phase;
    mp.allpass_tolerance = f64::INFINITY;
    design_hom(cir, nu, &mp)
}

/// Column order of the rate CSV.
pub const RATE_COLUMNS: [&str; 15] = [
    "snr_db",
    "nu",
    "c",
    "i_hom_l",
    "i_hom",
    "i_hom_u",
    "i_fom0",
    "i_fom1",
    "i_ubm",
    "delta_mse",
    "sigma_bound",
    "corollary_lhs",
    "ubm_stationarity",
    "fom0_converged",
    "fom1_converged",
];

/// Writes the rate table with a versioned header comment naming the unit.
pub fn write_rate_csv<W: Write>(mut out: W, rows: &[RateReport], unit: &str) -> io::Result<()> {
    writeln!(out, "# chanshort rates v1 unit={unit}")?;
    writeln!(out, "{}", RATE_COLUMNS.join(","))?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.snr_db,
            r.nu,
            r.c,
            r.i_hom_l,
            r.i_hom,
            r.i_hom_u,
            r.i_fom0,
            r.i_fom1,
            r.i_ubm,
            r.delta_mse,
            r.sigma_bound,
            r.corollary_lhs,
            r.ubm_stationarity,
            r.fom0_converged,
            r.fom1_converged
        )?;
    }
    Ok(())
}
