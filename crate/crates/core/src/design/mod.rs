//! Shortener design: mismatched-model rate expressions, closed-form
//! prefilter and feedback filters, and the FOM/UBM/HOM optimizers.

mod filters;
mod fom;
mod hom;
mod sigma;
mod ubm;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::channel::{Cir, MinPhaseOptions};
use crate::error::{Error, Result};
use crate::spectral::{centered_range, idtft, FrequencyGrid, Spectrum, TapVector, C64};

pub use filters::{FomFilters, HomFilters, ShortenerFilters, ShortenerKind, UbmFilters};
pub use fom::optimize_fom;
pub use hom::design_hom;
pub use sigma::{select_sigma, sigma_advisory_bound, SigmaChoice, DEFAULT_CODE_RATE_THRESHOLD};
pub use ubm::{optimize_ubm, ubm_rate, ubm_stationarity, UBM_DOMAIN_MARGIN};

/// Floor on `|F(ω)|` in the optimal prefilter denominator.
pub const F_MAG_FLOOR: f64 = 1e-8;
/// Relative eigenvalue spread below which the feedback matrix counts as singular.
pub const SINGULAR_RATIO: f64 = 1e-12;
/// Largest tolerated relative rate change caused by prefilter truncation.
pub const TRUNCATION_LIMIT: f64 = 1e-4;

/// A shortener choice with its design parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shortener {
    Fom { sigma: f64 },
    Ubm,
    Hom,
}

impl Shortener {
    pub fn new(kind: ShortenerKind, sigma: Option<f64>) -> Result<Self> {
        match (kind, sigma) {
            (ShortenerKind::Fom, Some(s)) => {
                check_sigma(s)?;
                Ok(Shortener::Fom { sigma: s })
            }
            (ShortenerKind::Fom, None) => Err(Error::InvalidInput("the FOM shortener needs σ".into())),
            (ShortenerKind::Ubm, _) => Ok(Shortener::Ubm),
            (ShortenerKind::Hom, _) => Ok(Shortener::Hom),
        }
    }

    pub fn kind(self) -> ShortenerKind {
        match self {
            Shortener::Fom { .. } => ShortenerKind::Fom,
            Shortener::Ubm => ShortenerKind::Ubm,
            Shortener::Hom => ShortenerKind::Hom,
        }
    }

    pub fn sigma(self) -> Option<f64> {
        match self {
            Shortener::Fom { sigma } => Some(sigma),
            _ => None,
        }
    }
}

impl std::fmt::Display for Shortener {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shortener::Fom { sigma } => write!(f, "fom(σ={sigma})"),
            other => write!(f, "{}", other.kind()),
        }
    }
}

/// Runs the optimizer for `shortener`. The HOM all-pass check uses
/// `opts.min_phase`.
pub fn design_shortener(cir: &Cir, nu: usize, shortener: Shortener, opts: &DesignOptions) -> Result<ShortenerFilters> {
    Ok(match shortener {
        Shortener::Fom { sigma } => ShortenerFilters::Fom(optimize_fom(cir, nu, sigma, opts)?),
        Shortener::Ubm => ShortenerFilters::Ubm(optimize_ubm(cir, nu, opts)?),
        Shortener::Hom => ShortenerFilters::Hom(design_hom(cir, nu, &opts.min_phase)?),
    })
}

/// Feedback quality of the decisions fed to the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackQuality {
    pub sigma: f64,
    pub eta: f64,
}

impl FeedbackQuality {
    pub fn new(sigma: f64, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&sigma) || !(0.0..=1.0).contains(&eta) || sigma > eta {
            return Err(Error::InvalidInput(format!("need 0 ≤ σ ≤ η ≤ 1, got σ = {sigma}, η = {eta}")));
        }
        Ok(Self { sigma, eta })
    }

    /// Hard decisions have unit self-energy.
    pub fn hard(sigma: f64) -> Result<Self> {
        Self::new(sigma, 1.0)
    }
}

/// Options shared by the optimizers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    pub grid: FrequencyGrid,
    pub prefilter_len: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub min_phase: MinPhaseOptions,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            grid: FrequencyGrid::default(),
            prefilter_len: crate::channel::DEFAULT_PREFILTER_LEN,
            max_iters: 50,
            rel_tol: 1e-9,
            min_phase: MinPhaseOptions::default(),
        }
    }
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::InvalidInput(format!("σ must lie in [0, 1], got {sigma}")));
    }
    Ok(())
}

pub(crate) fn check_nu(cir: &Cir, nu: usize) -> Result<()> {
    if nu >= cir.len() {
        return Err(Error::InvalidInput(format!("memory ν = {nu} must be below L = {}", cir.len())));
    }
    Ok(())
}

/// Per-channel quantities sampled once on a grid, plus a power table of
/// `e^{jpω}` used for all moment integrals.
#[derive(Debug, Clone)]
pub(crate) struct ChannelSpectra {
    pub grid: FrequencyGrid,
    pub n0: f64,
    pub l: usize,
    pub h: Vec<C64>,
    pub h2: Vec<f64>,
    pub m: Vec<f64>,
    z: Vec<C64>,
    pmax: isize,
    powers: Vec<Vec<C64>>,
}

impl ChannelSpectra {
    pub fn new(cir: &Cir, grid: FrequencyGrid) -> Self {
        let n0 = cir.n0();
        let z: Vec<C64> = grid.omegas().map(C64::cis).collect();
        let h: Vec<C64> = z.iter().map(|&zn| horner(cir.h().taps(), zn)).collect();
        let h2: Vec<f64> = h.iter().map(|v| v.norm_sqr()).collect();
        let m = h2.iter().map(|&a| -n0 / (n0 + a)).collect();
        let l = cir.len();
        let pmax = 2 * l as isize + 2;
        let powers = (-pmax..=pmax)
            .map(|p| grid.omegas().map(|w| C64::cis(p as f64 * w)).collect())
            .collect();
        Self { grid, n0, l, h, h2, m, z, pmax, powers }
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    /// `Σ_k taps_k z^{k + first_delay}` on the grid.
    pub fn eval(&self, taps: &[C64], first_delay: isize) -> Vec<C64> {
        self.z
            .iter()
            .enumerate()
            .map(|(n, &zn)| horner(taps, zn) * self.power(first_delay, n))
            .collect()
    }

    pub fn eval_taps(&self, t: &TapVector) -> Vec<C64> {
        self.eval(t.taps(), t.first_delay())
    }

    fn power(&self, p: isize, n: usize) -> C64 {
        if p.abs() <= self.pmax {
            self.powers[(p + self.pmax) as usize][n]
        } else {
            self.z[n].powi(p as i32)
        }
    }

    /// `mean_n x_n e^{jpω_n}`.
    pub fn moment(&self, x: &[C64], p: isize) -> C64 {
        let sum: C64 = if p.abs() <= self.pmax {
            let row = &self.powers[(p + self.pmax) as usize];
            x.iter().zip(row).map(|(a, b)| a * b).sum()
        } else {
            x.iter().zip(&self.z).map(|(a, z)| a * z.powi(p as i32)).sum()
        };
        sum / x.len() as f64
    }

    pub fn moment_real(&self, x: &[f64], p: isize) -> C64 {
        let row: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.moment(&row, p)
    }

    pub fn mean(x: &[f64]) -> f64 {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

fn horner(taps: &[C64], z: C64) -> C64 {
    taps.iter().rev().fold(C64::new(0.0, 0.0), |acc, &t| acc * z + t)
}

/// `M(ω) = −N0/(N0+|H(ω)|²)`.
pub fn m_spectrum(cir: &Cir, grid: FrequencyGrid) -> Spectrum {
    let cs = ChannelSpectra::new(cir, grid);
    Spectrum::new(grid, cs.m.iter().map(|&v| C64::new(v, 0.0)).collect()).expect("grid length")
}

/// `M̃(ω) = σ²(1+M(ω)) − σ`.
pub fn m_tilde_spectrum(m: &Spectrum, sigma: f64) -> Spectrum {
    m.map(|v| C64::new(sigma * sigma * (1.0 + v.re) - sigma, 0.0))
}

fn m_tilde(m: f64, sigma: f64) -> f64 {
    sigma * sigma * (1.0 + m) - sigma
}

/// Cross-correlation vector and feedback matrix of the theorem rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonTerms {
    pub eps1: DVector<C64>,
    pub eps2: DMatrix<C64>,
    /// Set when the smallest eigenvalue magnitude of `eps2` falls below
    /// [`SINGULAR_RATIO`] times the largest.
    pub singular: bool,
}

impl EpsilonTerms {
    pub fn dim(&self) -> usize {
        self.eps1.len()
    }

    /// `u = eps2⁻¹ eps1`, with the ridge applied when flagged singular.
    ///
    /// Returns the zero vector when `eps1` vanishes.
    pub fn solve(&self) -> Result<DVector<C64>> {
        let dim = self.dim();
        if dim == 0 || self.eps1.iter().all(|v| v.norm() == 0.0) {
            return Ok(DVector::zeros(dim));
        }
        let mut a = self.eps2.clone();
        if self.singular {
            let ridge = SINGULAR_RATIO * a.trace().re / dim as f64;
            if ridge == 0.0 {
                return Err(Error::SingularFeedbackMatrix);
            }
            for i in 0..dim {
                a[(i, i)] += C64::new(ridge, 0.0);
            }
        }
        // eps2 is negative semidefinite
        let neg = -a.clone();
        if let Some(ch) = neg.cholesky() {
            return Ok(-ch.solve(&self.eps1));
        }
        a.lu().solve(&self.eps1).ok_or(Error::SingularFeedbackMatrix)
    }

    /// `eps1† eps2⁻¹ eps1`, real and non-positive.
    pub fn quadratic_form(&self) -> Result<f64> {
        let u = self.solve()?;
        Ok(self.eps1.dotc(&u).re)
    }
}

fn hermitian_singular(a: &DMatrix<C64>) -> bool {
    if a.nrows() == 0 {
        return false;
    }
    let eig = SymmetricEigen::new(a.clone());
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let max = abs.iter().cloned().fold(0.0, f64::max);
    let min = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    max == 0.0 || min < SINGULAR_RATIO * max
}

fn feedback_dim(l: usize, nu: usize) -> usize {
    l - nu - 1
}

pub(crate) fn epsilon_terms(cs: &ChannelSpectra, f: &[C64], nu: usize, sigma: f64) -> EpsilonTerms {
    let dim = feedback_dim(cs.l, nu);
    let fv = cs.eval(f, 0);
    let base = nu as isize + 1;
    let x1: Vec<C64> = fv.iter().zip(&cs.m).map(|(fv, &m)| fv.conj() * m * sigma).collect();
    let eps1 = DVector::from_fn(dim, |i, _| cs.moment(&x1, base + i as isize));
    let x2: Vec<C64> = fv
        .iter()
        .zip(&cs.m)
        .map(|(fv, &m)| {
            let a = fv.norm_sqr();
            C64::new(m_tilde(m, sigma) * a / (1.0 + a), 0.0)
        })
        .collect();
    // Toeplitz: entry (a, b) only depends on a − b
    let lags: Vec<C64> = (-(dim as isize)..=dim as isize).map(|p| cs.moment(&x2, p)).collect();
    let mut eps2 = DMatrix::from_fn(dim, dim, |a, b| lags[(a as isize - b as isize + dim as isize) as usize]);
    // exact Hermitian symmetry
    for a in 0..dim {
        eps2[(a, a)] = C64::new(eps2[(a, a)].re, 0.0);
        for b in 0..a {
            eps2[(b, a)] = eps2[(a, b)].conj();
        }
    }
    let singular = hermitian_singular(&eps2);
    EpsilonTerms { eps1, eps2, singular }
}

/// Grid evaluation of the correlation vector and feedback matrix for the
/// target `f` (taps at delays `0..=ν`).
pub fn epsilon_vectors(f: &TapVector, cir: &Cir, sigma: f64, nu: usize, grid: FrequencyGrid) -> Result<EpsilonTerms> {
    check_target(f, cir, nu)?;
    let cs = ChannelSpectra::new(cir, grid);
    Ok(epsilon_terms(&cs, f.taps(), nu, sigma))
}

fn check_target(f: &TapVector, cir: &Cir, nu: usize) -> Result<()> {
    check_nu(cir, nu)?;
    if f.first_delay() != 0 || f.len() != nu + 1 {
        return Err(Error::InvalidInput(format!("target must have taps at delays 0..={nu}")));
    }
    Ok(())
}

pub(crate) fn target_memory(f: &TapVector, cir: &Cir) -> Result<usize> {
    let nu = f.len() - 1;
    check_target(f, cir, nu)?;
    Ok(nu)
}

/// `J(F) = 1 + mean[ln(1+|F|²) + M(1+|F|²)]`.
pub(crate) fn j_rate(cs: &ChannelSpectra, fv: &[C64]) -> f64 {
    let s: f64 = fv
        .iter()
        .zip(&cs.m)
        .map(|(f, &m)| {
            let a = f.norm_sqr();
            a.ln_1p() + m * (1.0 + a)
        })
        .sum();
    1.0 + s / fv.len() as f64
}

pub(crate) fn theorem_rate_cs(cs: &ChannelSpectra, f: &[C64], nu: usize, sigma: f64) -> Result<f64> {
    let j = j_rate(cs, &cs.eval(f, 0));
    if sigma == 0.0 || feedback_dim(cs.l, nu) == 0 {
        return Ok(j);
    }
    Ok(j - epsilon_terms(cs, f, nu, sigma).quadratic_form()?)
}

/// Rate achieved by the target `f` with the matching optimal prefilter and
/// feedback filter, `J(F) − eps1† eps2⁻¹ eps1` (nats/symbol).
pub fn theorem1_rate(f: &TapVector, cir: &Cir, sigma: f64, grid: FrequencyGrid) -> Result<f64> {
    let nu = target_memory(f, cir)?;
    theorem_rate_cs(&ChannelSpectra::new(cir, grid), f.taps(), nu, sigma)
}

/// MILB from spectra. `wh` is `W·H`, `w2` is `|W|²`.
pub(crate) fn milb_spectra(cs: &ChannelSpectra, wh: &[C64], w2: &[f64], fv: &[C64], bv: &[C64], sigma: f64) -> f64 {
    let n = cs.n();
    let mut acc = 0.0;
    for i in 0..n {
        let f = fv[i];
        let b = bv[i];
        let a = f.norm_sqr();
        let loss = a * w2[i] * (cs.n0 + cs.h2[i]) + sigma * a * b.norm_sqr() - 2.0 * sigma * a * (wh[i] * b.conj()).re;
        acc += a.ln_1p() - a - loss / (1.0 + a) + 2.0 * (f.conj() * (wh[i] - sigma * b)).re;
    }
    acc / n as f64
}

/// Mismatched-model lower bound of the prefilter `w`, target `f` and
/// feedback `b` at feedback quality `σ` (nats/symbol).
///
/// `b` is `None` when there is no feedback filter.
pub fn milb_general(
    w: &TapVector,
    f: &TapVector,
    b: Option<&TapVector>,
    cir: &Cir,
    sigma: f64,
    grid: FrequencyGrid,
) -> f64 {
    let cs = ChannelSpectra::new(cir, grid);
    let wv = cs.eval_taps(w);
    let wh: Vec<C64> = wv.iter().zip(&cs.h).map(|(w, h)| w * h).collect();
    let w2: Vec<f64> = wv.iter().map(|w| w.norm_sqr()).collect();
    let fv = cs.eval_taps(f);
    let bv = b.map_or_else(|| vec![C64::new(0.0, 0.0); cs.n()], |b| cs.eval_taps(b));
    milb_spectra(&cs, &wh, &w2, &fv, &bv, sigma)
}

/// `B_opt(ω)` coefficients: `b_m = −conj(u_m)` at delays `ν+1+m`.
pub(crate) fn feedback_from_solution(u: &DVector<C64>, nu: usize) -> Option<TapVector> {
    if u.is_empty() {
        return None;
    }
    let taps = u.iter().map(|v| -v.conj()).collect();
    Some(TapVector::starting_at(taps, nu as isize + 1).expect("finite feedback taps"))
}

/// Optimal feedback filter for the target `f`; zeros when `σ = 0`, `None`
/// when `ν = L−1`.
pub fn optimal_b(f: &TapVector, cir: &Cir, sigma: f64, grid: FrequencyGrid) -> Result<Option<TapVector>> {
    let nu = target_memory(f, cir)?;
    let cs = ChannelSpectra::new(cir, grid);
    Ok(feedback_from_solution(&epsilon_terms(&cs, f.taps(), nu, sigma).solve()?, nu))
}

/// Optimal prefilter spectrum `H*(1+|F|²+σF*B)/(F*(N0+|H|²))`.
pub(crate) fn optimal_w_values(cs: &ChannelSpectra, fv: &[C64], bv: &[C64], sigma: f64) -> Vec<C64> {
    (0..cs.n())
        .map(|i| {
            let f = fv[i];
            let fc = if f.norm() < F_MAG_FLOOR {
                if f.norm() == 0.0 {
                    C64::new(F_MAG_FLOOR, 0.0)
                } else {
                    f.conj() / f.norm() * F_MAG_FLOOR
                }
            } else {
                f.conj()
            };
            cs.h[i].conj() * (1.0 + f.norm_sqr() + sigma * f.conj() * bv[i]) / (fc * (cs.n0 + cs.h2[i]))
        })
        .collect()
}

/// Prefilter truncated from its grid spectrum plus the relative rate change
/// truncation caused.
pub(crate) fn truncated_w(
    cs: &ChannelSpectra,
    fv: &[C64],
    bv: &[C64],
    sigma: f64,
    trunc_len: usize,
) -> Result<(TapVector, f64)> {
    let wv = optimal_w_values(cs, fv, bv, sigma);
    let w = idtft(&Spectrum::new(cs.grid, wv.clone())?, centered_range(trunc_len))?;
    let exact = milb_from_w(cs, &wv, fv, bv, sigma);
    let approx = milb_from_w(cs, &cs.eval_taps(&w), fv, bv, sigma);
    let relative = (approx - exact).abs() / exact.abs().max(1e-300);
    Ok((w, relative))
}

/// Prefilter maximizing the rate over a centered FIR of `len` taps, plus
/// its relative rate gap to the unconstrained optimum.
///
/// The rate is a concave quadratic in `w`, so the optimum solves the
/// Hermitian Toeplitz system `R w = p` with `R` built from
/// `|F|²(N0+|H|²)/(1+|F|²)` and `p` from `H*(F + σ|F|²B/(1+|F|²))`. Unlike
/// truncating the ideal response this stays well posed when `F` vanishes
/// on the unit circle.
pub(crate) fn fir_w(cs: &ChannelSpectra, fv: &[C64], bv: &[C64], sigma: f64, len: usize) -> Result<(TapVector, f64)> {
    let n = cs.n();
    let mut weight = Vec::with_capacity(n);
    let mut cross = Vec::with_capacity(n);
    for i in 0..n {
        let a = fv[i].norm_sqr();
        weight.push(C64::new(a * (cs.n0 + cs.h2[i]) / (1.0 + a), 0.0));
        cross.push(cs.h[i].conj() * (fv[i] + sigma * a * bv[i] / (1.0 + a)));
    }
    let range = centered_range(len);
    let span = len as isize - 1;
    let t = idtft(&Spectrum::new(cs.grid, weight)?, -span..=span)?;
    let rhs = idtft(&Spectrum::new(cs.grid, cross)?, range.clone())?;
    let mut r = DMatrix::from_fn(len, len, |i, j| t.at_delay(i as isize - j as isize));
    let ridge = 1e-12 * t.at_delay(0).re.max(1e-300);
    for i in 0..len {
        r[(i, i)] += ridge;
    }
    let p = DVector::from_column_slice(rhs.taps());
    let sol = match r.clone().cholesky() {
        Some(c) => c.solve(&p),
        None => r.lu().solve(&p).ok_or(Error::SingularFeedbackMatrix)?,
    };
    let w = TapVector::starting_at(sol.iter().copied().collect(), *range.start())?;
    let exact = milb_from_w(cs, &optimal_w_values(cs, fv, bv, sigma), fv, bv, sigma);
    let approx = milb_from_w(cs, &cs.eval_taps(&w), fv, bv, sigma);
    Ok((w, (approx - exact).abs() / exact.abs().max(1e-300)))
}

fn milb_from_w(cs: &ChannelSpectra, wv: &[C64], fv: &[C64], bv: &[C64], sigma: f64) -> f64 {
    let wh: Vec<C64> = wv.iter().zip(&cs.h).map(|(w, h)| w * h).collect();
    let w2: Vec<f64> = wv.iter().map(|w| w.norm_sqr()).collect();
    milb_spectra(cs, &wh, &w2, fv, bv, sigma)
}

/// Optimal prefilter for `(f, b)`, truncated to a centered FIR of
/// `trunc_len` taps.
pub fn optimal_w(
    f: &TapVector,
    b: Option<&TapVector>,
    cir: &Cir,
    sigma: f64,
    grid: FrequencyGrid,
    trunc_len: usize,
) -> Result<TapVector> {
    let cs = ChannelSpectra::new(cir, grid);
    let fv = cs.eval_taps(f);
    let bv = b.map_or_else(|| vec![C64::new(0.0, 0.0); cs.n()], |b| cs.eval_taps(b));
    let (w, relative) = truncated_w(&cs, &fv, &bv, sigma, trunc_len)?;
    if relative > TRUNCATION_LIMIT {
        return Err(Error::TruncationLoss { relative, limit: TRUNCATION_LIMIT });
    }
    Ok(w)
}

pub(crate) fn gradient_cs(cs: &ChannelSpectra, f: &[C64], nu: usize, sigma: f64) -> Result<Vec<C64>> {
    let fv = cs.eval(f, 0);
    let dim = feedback_dim(cs.l, nu);
    let xj: Vec<C64> = fv
        .iter()
        .zip(&cs.m)
        .map(|(f, &m)| f * (1.0 / (1.0 + f.norm_sqr()) + m))
        .collect();
    let mut g: Vec<C64> = (0..=nu).map(|k| cs.moment(&xj, -(k as isize))).collect();
    if sigma == 0.0 || dim == 0 {
        return Ok(g);
    }
    let terms = epsilon_terms(cs, f, nu, sigma);
    let u = terms.solve()?;
    let base = nu as isize + 1;
    let c: Vec<C64> = fv
        .iter()
        .zip(&cs.m)
        .map(|(f, &m)| {
            let a = f.norm_sqr();
            f * (m_tilde(m, sigma) / ((1.0 + a) * (1.0 + a)))
        })
        .collect();
    for (k, gk) in g.iter_mut().enumerate() {
        let k = k as isize;
        // u† dε1_k
        let d1: C64 = (0..dim)
            .map(|m| u[m].conj() * cs.moment_real(&cs.m, base + m as isize - k) * sigma)
            .sum();
        // u† dε2_k u, entry (a, b) = mean(c e^{−jkω} e^{j(a−b)ω})
        let lags: Vec<C64> = (-(dim as isize)..=dim as isize).map(|p| cs.moment(&c, p - k)).collect();
        let mut d2 = C64::new(0.0, 0.0);
        for a in 0..dim {
            for b in 0..dim {
                d2 += u[a].conj() * lags[(a as isize - b as isize + dim as isize) as usize] * u[b];
            }
        }
        *gk -= d1 - d2;
    }
    Ok(g)
}

/// `∂I/∂f_k*` of the theorem rate, one entry per target tap.
pub fn fom_gradient(f: &TapVector, cir: &Cir, sigma: f64, grid: FrequencyGrid) -> Result<Vec<C64>> {
    let nu = target_memory(f, cir)?;
    gradient_cs(&ChannelSpectra::new(cir, grid), f.taps(), nu, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{random_iid_channel, standard_channel, StandardChannel};
    use crate::spectral::mean_integral;

    fn grid(n: usize) -> FrequencyGrid {
        FrequencyGrid::new(n).unwrap()
    }

    fn flat(n0: f64) -> Cir {
        Cir::new(TapVector::impulse(), n0).unwrap()
    }

    fn taps(v: &[(f64, f64)]) -> TapVector {
        TapVector::causal(v.iter().map(|&(a, b)| C64::new(a, b)).collect()).unwrap()
    }

    #[test]
    fn m_spectrum_cases() {
        let m = m_spectrum(&flat(1.0), grid(16));
        assert!(m.values().iter().all(|v| (v.re + 0.5).abs() < 1e-15));
        let epr4 = standard_channel(StandardChannel::Epr4, 0.3).unwrap();
        let m = m_spectrum(&epr4, grid(64));
        assert!((m.values()[32].re + 1.0).abs() < 1e-15);
        assert!(m.values().iter().all(|v| v.re >= -1.0 && v.re < 0.0));
        let m = m_spectrum(&epr4.with_n0(1e12).unwrap(), grid(64));
        assert!(m.values().iter().all(|v| (v.re + 1.0).abs() < 1e-11));
    }

    #[test]
    fn m_tilde_cases() {
        let m = m_spectrum(&flat(1.0), grid(8));
        assert!(m_tilde_spectrum(&m, 0.0).values().iter().all(|v| v.norm() == 0.0));
        assert_eq!(m_tilde_spectrum(&m, 1.0), m);
        assert!((m_tilde_spectrum(&m, 0.5).values()[0].re + 0.375).abs() < 1e-15);
    }

    #[test]
    fn epsilon_basic_cases() {
        let cir = standard_channel(StandardChannel::ProakisC, 0.1).unwrap();
        let f = taps(&[(0.9, 0.1), (1.2, -0.3)]);
        let t = epsilon_vectors(&f, &cir, 0.0, 1, grid(256)).unwrap();
        assert!(t.eps1.iter().all(|v| v.norm() == 0.0));
        let z = TapVector::zeros(2, 0).unwrap();
        let t = epsilon_vectors(&z, &cir, 1.0, 1, grid(256)).unwrap();
        assert!(t.eps2.iter().all(|v| v.norm() == 0.0));
        assert_eq!(t.quadratic_form().unwrap(), 0.0);
        let t = epsilon_vectors(&f, &cir, 1.0, 1, grid(1024)).unwrap();
        assert_eq!(t.eps2.nrows(), 3);
        assert!((t.eps2.adjoint() - &t.eps2).norm() < 1e-12);
        let fine = epsilon_vectors(&f, &cir, 1.0, 1, grid(10240)).unwrap();
        assert!((fine.eps2 - &t.eps2).norm() < 1e-8);
        assert!((fine.eps1 - &t.eps1).norm() < 1e-8);
        assert!(t.quadratic_form().unwrap() <= 0.0);
    }

    #[test]
    fn theorem_rate_flat_cases() {
        let cir = flat(1.0);
        let g = grid(64);
        let zero = TapVector::zeros(1, 0).unwrap();
        assert!((theorem1_rate(&zero, &cir, 0.0, g).unwrap() - 0.5).abs() < 1e-15);
        let one = TapVector::impulse();
        assert!((theorem1_rate(&one, &cir, 0.0, g).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn milb_zero_filters() {
        let cir = standard_channel(StandardChannel::Epr4, 0.5).unwrap();
        let z = TapVector::zeros(2, 0).unwrap();
        let b = TapVector::zeros(2, 2).unwrap();
        assert_eq!(milb_general(&TapVector::zeros(1, 0).unwrap(), &z, Some(&b), &cir, 1.0, grid(128)), 0.0);
    }

    #[test]
    fn flat_prefilter_is_identity() {
        let cir = flat(1.0);
        let w = optimal_w(&TapVector::impulse(), None, &cir, 0.0, grid(64), 9).unwrap();
        assert!(w.max_abs_diff(&TapVector::impulse()) < 1e-12);
    }

    #[test]
    fn full_memory_prefilter_closed_form() {
        let cir = standard_channel(StandardChannel::ProakisC, 0.2).unwrap();
        let g = grid(512);
        let cs = ChannelSpectra::new(&cir, g);
        let zero = vec![C64::new(0.0, 0.0); cs.n()];
        let w = optimal_w_values(&cs, &cs.h, &zero, 0.0);
        for i in 0..cs.n() {
            let expect = (1.0 + cs.h2[i]) / (cs.n0 + cs.h2[i]);
            assert!((w[i] - C64::new(expect, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn consistency_with_full_length_prefilter() {
        let g = grid(512);
        for (cir, f) in [
            (standard_channel(StandardChannel::ProakisC, 0.1).unwrap(), taps(&[(0.8, 0.2), (1.1, -0.4)])),
            (standard_channel(StandardChannel::Epr4, 0.05).unwrap(), taps(&[(1.0, 0.0), (0.7, 0.3)])),
            (random_iid_channel(5, 4, 0.2).unwrap(), taps(&[(0.5, 0.5), (0.9, -0.1), (0.2, 0.3)])),
        ] {
            for sigma in [0.0, 0.5, 1.0] {
                let b = optimal_b(&f, &cir, sigma, g).unwrap();
                let w = optimal_w(&f, b.as_ref(), &cir, sigma, g, 512).unwrap();
                let lhs = milb_general(&w, &f, b.as_ref(), &cir, sigma, g);
                let rhs = theorem1_rate(&f, &cir, sigma, g).unwrap();
                assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1.0), "σ = {sigma}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn scalar_feedback_case() {
        let cir = standard_channel(StandardChannel::Epr4, 0.1).unwrap();
        let f = taps(&[(1.0, 0.0), (0.6, 0.2), (0.1, -0.1)]);
        let t = epsilon_vectors(&f, &cir, 1.0, 2, grid(256)).unwrap();
        let b = optimal_b(&f, &cir, 1.0, grid(256)).unwrap().unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.first_delay(), 3);
        let expect = -(t.eps1[0] / t.eps2[(0, 0)]).conj();
        assert!((b.taps()[0] - expect).norm() < 1e-14);
    }

    #[test]
    fn feedback_term_vanishes_with_sigma() {
        // b itself tends to a nonzero limit as σ → 0+, only its rate
        // contribution vanishes
        let cir = standard_channel(StandardChannel::ProakisC, 0.1).unwrap();
        let f = taps(&[(0.8, 0.2), (1.1, -0.4)]);
        let g = grid(256);
        let q = |s: f64| epsilon_vectors(&f, &cir, s, 1, g).unwrap().quadratic_form().unwrap();
        assert!(q(1e-9).abs() < 1e-8);
        assert!(q(1e-6).abs() < 1e-5);
        let b7 = optimal_b(&f, &cir, 1e-7, g).unwrap().unwrap();
        let b9 = optimal_b(&f, &cir, 1e-9, g).unwrap().unwrap();
        assert!(b7.max_abs_diff(&b9) < 1e-6);
        let b0 = optimal_b(&f, &cir, 0.0, g).unwrap().unwrap();
        assert_eq!(b0.energy(), 0.0);
    }

    /// Envelope form of the gradient evaluated at the optimal feedback filter.
    fn compact_gradient(cs: &ChannelSpectra, f: &[C64], nu: usize, sigma: f64) -> Vec<C64> {
        let fv = cs.eval(f, 0);
        let u = epsilon_terms(cs, f, nu, sigma).solve().unwrap();
        let bv = match feedback_from_solution(&u, nu) {
            Some(b) => cs.eval_taps(&b),
            None => vec![C64::new(0.0, 0.0); cs.n()],
        };
        let x: Vec<C64> = (0..cs.n())
            .map(|i| {
                let a = fv[i].norm_sqr();
                let m = cs.m[i];
                fv[i] * (1.0 / (1.0 + a) + m)
                    + sigma * m * bv[i]
                    + fv[i] * m_tilde(m, sigma) * bv[i].norm_sqr() / ((1.0 + a) * (1.0 + a))
            })
            .collect();
        (0..=nu).map(|k| cs.moment(&x, -(k as isize))).collect()
    }

    #[test]
    fn assembled_matches_envelope_gradient() {
        let cir = standard_channel(StandardChannel::ProakisC, 0.08).unwrap();
        let cs = ChannelSpectra::new(&cir, grid(1024));
        let f = [C64::new(0.7, 0.1), C64::new(1.3, -0.2)];
        for sigma in [0.0, 0.3, 1.0] {
            let a = gradient_cs(&cs, &f, 1, sigma).unwrap();
            let b = compact_gradient(&cs, &f, 1, sigma);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).norm() < 1e-12, "σ = {sigma}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn zero_target_has_zero_rate_gradient() {
        let cir = standard_channel(StandardChannel::Epr4, 0.1).unwrap();
        let z = TapVector::zeros(2, 0).unwrap();
        let g = fom_gradient(&z, &cir, 0.0, grid(128)).unwrap();
        assert!(g.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn rejects_bad_shapes() {
        let cir = standard_channel(StandardChannel::Epr4, 0.1).unwrap();
        let f = TapVector::starting_at(vec![C64::new(1.0, 0.0)], 1).unwrap();
        assert!(theorem1_rate(&f, &cir, 0.0, grid(8)).is_err());
        let f = TapVector::zeros(4, 0).unwrap();
        assert!(theorem1_rate(&f, &cir, 0.0, grid(8)).is_ok());
        let f = TapVector::zeros(5, 0).unwrap();
        assert!(theorem1_rate(&f, &cir, 0.0, grid(8)).is_err());
        assert!(FeedbackQuality::hard(0.5).is_ok());
        assert!(FeedbackQuality::new(0.8, 0.5).is_err());
    }

    #[test]
    fn m_spectrum_mean_is_negative_mse() {
        let cir = flat(1.0);
        assert!((mean_integral(&m_spectrum(&cir, grid(8))).re + 0.5).abs() < 1e-15);
    }

    #[test]
    fn fir_prefilter_beats_truncation() {
        let g = grid(2048);
        for (ch, snr) in [(StandardChannel::Epr4, 10.0), (StandardChannel::ProakisC, 14.0)] {
            let cir = standard_channel(ch, 10f64.powf(-snr / 10.0)).unwrap();
            let cs = ChannelSpectra::new(&cir, g);
            let f = TapVector::causal(vec![C64::new(1.2, 0.1), C64::new(0.7, -0.3)]).unwrap();
            let fv = cs.eval_taps(&f);
            let b = optimal_b(&f, &cir, 1.0, g).unwrap().unwrap();
            let bv = cs.eval_taps(&b);
            for len in [9, 33] {
                let (wf, _) = fir_w(&cs, &fv, &bv, 1.0, len).unwrap();
                let (wt, _) = truncated_w(&cs, &fv, &bv, 1.0, len).unwrap();
                let rf = milb_general(&wf, &f, Some(&b), &cir, 1.0, g);
                let rt = milb_general(&wt, &f, Some(&b), &cir, 1.0, g);
                assert!(rf >= rt - 1e-12, "{ch} len {len}: {rf} < {rt}");
            }
            let (_, gap) = fir_w(&cs, &fv, &bv, 1.0, 129).unwrap();
            assert!(gap < 1e-6, "{ch}: gap {gap}");
        }
    }

    #[test]
    fn fir_prefilter_survives_spectral_null_in_target() {
        let g = grid(1024);
        let cir = standard_channel(StandardChannel::Epr4, 0.1).unwrap();
        let cs = ChannelSpectra::new(&cir, g);
        // F(ω) = 1 + e^{jω} vanishes at ω = π
        let f = TapVector::causal(vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]).unwrap();
        let fv = cs.eval_taps(&f);
        let zeros = vec![C64::new(0.0, 0.0); cs.n()];
        let (w, gap) = fir_w(&cs, &fv, &zeros, 0.0, 129).unwrap();
        assert!(w.energy().is_finite() && w.energy() < 1e4);
        assert!(gap < 1e-2, "gap {gap}");
    }
}
