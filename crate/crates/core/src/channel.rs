//! Channel impulse responses, random channel draws and homomorphic
//! minimum-phase conversion.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{centered_range, dtft, FrequencyGrid, TapVector, C64};

/// Default two-sided length of the homomorphic all-pass prefilter.
pub const DEFAULT_PREFILTER_LEN: usize = 129;
/// Magnitude floor applied before taking the log in the cepstrum.
pub const CEPSTRUM_MAG_FLOOR: f64 = 1e-10;

/// A channel impulse response together with its noise variance `N0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cir {
    h: TapVector,
    n0: f64,
}

impl Cir {
    pub fn new(h: TapVector, n0: f64) -> Result<Self> {
        if !(n0 > 0.0 && n0.is_finite()) {
            return Err(Error::InvalidInput(format!("noise variance must be positive, got {n0}")));
        }
        if h.first_delay() != 0 {
            return Err(Error::InvalidInput("channel response must be causal with origin 0".into()));
        }
        Ok(Self { h, n0 })
    }

    /// Unit-energy convention: `N0 = 10^{−snr/10}`.
    pub fn with_snr_db(h: TapVector, snr_db: f64) -> Result<Self> {
        Self::new(h, snr_db_to_n0(snr_db))
    }

    pub fn h(&self) -> &TapVector {
        &self.h
    }

    pub fn n0(&self) -> f64 {
        self.n0
    }

    /// Channel memory plus one.
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn with_n0(&self, n0: f64) -> Result<Self> {
        Self::new(self.h.clone(), n0)
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.h.energy() / self.n0).log10()
    }
}

pub fn snr_db_to_n0(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// The two textbook ISI channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardChannel {
    Epr4,
    ProakisC,
}

impl StandardChannel {
    pub fn taps(self) -> &'static [f64] {
        match self {
            StandardChannel::Epr4 => &[0.5, 0.5, -0.5, -0.5],
            StandardChannel::ProakisC => &[0.227, 0.46, 0.688, 0.46, 0.227],
        }
    }
}

impl FromStr for StandardChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "epr4" => Ok(StandardChannel::Epr4),
            "proakis_c" | "proakisc" => Ok(StandardChannel::ProakisC),
            _ => Err(Error::UnknownChannel(s.to_string())),
        }
    }
}

impl fmt::Display for StandardChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StandardChannel::Epr4 => write!(f, "epr4"),
            StandardChannel::ProakisC => write!(f, "proakis_c"),
        }
    }
}

pub fn standard_channel(name: StandardChannel, n0: f64) -> Result<Cir> {
    Cir::new(TapVector::from_real(name.taps())?, n0)
}

/// IID circular complex Gaussian taps normalized to unit energy.
///
/// Draws come from ChaCha8 seeded with `seed`, so a seed always reproduces
/// the same realization.
pub fn random_iid_taps(length: usize, seed: u64) -> Result<TapVector> {
    if length == 0 {
        return Err(Error::InvalidInput("channel length must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taps: Vec<C64> = (0..length)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re, im)
        })
        .collect();
    let energy: f64 = taps.iter().map(|t| t.norm_sqr()).sum();
    let scale = energy.sqrt().recip();
    taps.iter_mut().for_each(|t| *t *= scale);
    TapVector::causal(taps)
}

pub fn random_iid_channel(length: usize, seed: u64, n0: f64) -> Result<Cir> {
    Cir::new(random_iid_taps(length, seed)?, n0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinPhaseOptions {
    pub fft_size: usize,
    pub prefilter_len: usize,
    /// Largest tolerated `| |W(ω)|·√N0 − 1 |` after truncation.
    pub allpass_tolerance: f64,
}

impl Default for MinPhaseOptions {
    fn default() -> Self {
        Self { fft_size: 8192, prefilter_len: DEFAULT_PREFILTER_LEN, allpass_tolerance: 0.25 }
    }
}

/// Output of [`min_phase`].
#[derive(Debug, Clone, PartialEq)]
pub struct MinPhaseResult {
    /// All-pass prefilter scaled by `1/√N0`, two-sided and truncated.
    pub w_hom: TapVector,
    /// Minimum-phase equivalent `h̃ = w_hom ⋆ h`, `L` taps.
    pub h_tilde: TapVector,
    /// Measured `max_ω | |W_hom(ω)|·√N0 − 1 |` of the truncated prefilter.
    pub allpass_deviation: f64,
}

/// Minimum-phase spectral factor via the real cepstrum.
///
/// `log|H|` is floored at [`CEPSTRUM_MAG_FLOOR`] so exact spectral nulls stay
/// finite. The all-pass prefilter is built from the phase difference between
/// the factor and `H`; at grid points where `H` vanishes the phase is taken
/// from the neighbouring points.
pub fn min_phase(cir: &Cir, opts: &MinPhaseOptions) -> Result<MinPhaseResult> {
    let n = opts.fft_size;
    let factor = CepstralFactor::new(cir, n)?;
    let h_spec = &factor.h_spec;
    let h_min_spec = &factor.h_min_spec;
    let h_tilde = factor.response(cir)?;
    let sqrt_n0 = cir.n0().sqrt();

    // all-pass phase e^{j(arg H_min − arg H)} on the FFT grid
    let peak = h_spec.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let null = |v: C64| v.norm() <= 1e-8 * peak;
    let mut allpass: Vec<Option<C64>> = h_spec
        .iter()
        .zip(h_min_spec)
        .map(|(&hv, &mv)| {
            if null(hv) || mv.norm() == 0.0 {
                None
            } else {
                Some((mv / mv.norm()) * (hv.conj() / hv.norm()))
            }
        })
        .collect();
    fill_null_phases(&mut allpass);
    let phases: Vec<C64> = allpass.into_iter().map(|v| v.unwrap_or(C64::new(1.0, 0.0))).collect();
    let coeffs = factor.coefficients(&phases);

    let range = centered_range(opts.prefilter_len.min(n));
    let w_taps: Vec<C64> = range.clone().map(|d| CepstralFactor::at_delay(&coeffs, d) / sqrt_n0).collect();
    let w_hom = TapVector::starting_at(w_taps, *range.start())?;

    let check = FrequencyGrid::new(4 * opts.prefilter_len.next_power_of_two().max(256))?;
    let allpass_deviation = dtft(&w_hom, check)
        .values()
        .iter()
        .map(|v| (v.norm() * sqrt_n0 - 1.0).abs())
        .fold(0.0, f64::max);
    if allpass_deviation > opts.allpass_tolerance {
        return Err(Error::AllPassDeviation {
            deviation: allpass_deviation,
            tolerance: opts.allpass_tolerance,
        });
    }
    Ok(MinPhaseResult { w_hom, h_tilde, allpass_deviation })
}

/// Minimum-phase equivalent `h̃` (first `L` taps of the spectral factor of
/// `|H|²/N0`), without building the all-pass prefilter.
pub fn min_phase_response(cir: &Cir, fft_size: usize) -> Result<TapVector> {
    CepstralFactor::new(cir, fft_size)?.response(cir)
}

/// Spectra sampled on the half-bin shifted grid `2π(k+½)/N`, which never
/// hits `ω = 0` or `ω = π` exactly. Transforms on this grid are
/// anti-periodic: index `N − m` holds the negated coefficient of `−m`.
struct CepstralFactor {
    h_spec: Vec<C64>,
    h_min_spec: Vec<C64>,
    twiddle: Vec<C64>,
}

impl CepstralFactor {
    fn new(cir: &Cir, n: usize) -> Result<Self> {
        let l = cir.len();
        if n < 16 * l || !n.is_power_of_two() {
            return Err(Error::InvalidInput(format!(
                "fft_size must be a power of two and at least 16·L = {}",
                16 * l
            )));
        }
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let inv_n = 1.0 / n as f64;
        let twiddle: Vec<C64> = (0..n).map(|i| C64::cis(-PI * i as f64 / n as f64)).collect();

        let mut h_spec = vec![C64::new(0.0, 0.0); n];
        for (i, &t) in cir.h().taps().iter().enumerate() {
            h_spec[i] = t * twiddle[i];
        }
        fwd.process(&mut h_spec);

        // real cepstrum of |H|
        let mut cep: Vec<C64> = h_spec
            .iter()
            .map(|v| C64::new(v.norm().max(CEPSTRUM_MAG_FLOOR).ln(), 0.0))
            .collect();
        inv.process(&mut cep);
        for (c, t) in cep.iter_mut().zip(&twiddle) {
            *c *= t.conj() * inv_n;
        }
        cep[0].im = 0.0;

        // fold onto the causal side
        for c in cep.iter_mut().take(n / 2).skip(1) {
            *c *= 2.0;
        }
        for c in cep.iter_mut().skip(n / 2 + 1) {
            *c = C64::new(0.0, 0.0);
        }
        for (c, t) in cep.iter_mut().zip(&twiddle) {
            *c *= t;
        }
        fwd.process(&mut cep);
        let h_min_spec = cep.iter().map(|c| c.exp()).collect();
        Ok(Self { h_spec, h_min_spec, twiddle })
    }

    /// Coefficients of a spectrum on the shifted grid, index `i` ↔ delay `i`.
    fn coefficients(&self, spec: &[C64]) -> Vec<C64> {
        let n = spec.len();
        let mut out = spec.to_vec();
        FftPlanner::<f64>::new().plan_fft_inverse(n).process(&mut out);
        let inv_n = 1.0 / n as f64;
        out.iter_mut().zip(&self.twiddle).for_each(|(c, t)| *c *= t.conj() * inv_n);
        out
    }

    /// Coefficient at a (possibly negative) delay.
    fn at_delay(coeffs: &[C64], d: isize) -> C64 {
        let n = coeffs.len() as isize;
        if d >= 0 {
            coeffs[d as usize]
        } else {
            -coeffs[(n + d) as usize]
        }
    }

    fn response(&self, cir: &Cir) -> Result<TapVector> {
        let coeffs = self.coefficients(&self.h_min_spec);
        let scale = 1.0 / cir.n0().sqrt();
        TapVector::causal(coeffs[..cir.len()].iter().map(|&t| t * scale).collect())
    }
}

/// Replaces undefined unit phasors with the normalized average of the
/// nearest defined neighbours on the (circular) grid.
fn fill_null_phases(values: &mut [Option<C64>]) {
    let n = values.len();
    let snapshot: Vec<Option<C64>> = values.to_vec();
    for i in 0..n {
        if snapshot[i].is_some() {
            continue;
        }
        let left = (1..n).map(|k| snapshot[(i + n - k) % n]).find(|v| v.is_some()).flatten();
        let right = (1..n).map(|k| snapshot[(i + k) % n]).find(|v| v.is_some()).flatten();
        let avg = match (left, right) {
            (Some(a), Some(b)) => a + b,
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => C64::new(1.0, 0.0),
        };
        values[i] = Some(if avg.norm() > 0.0 { avg / avg.norm() } else { C64::new(1.0, 0.0) });
    }
}

/// Splits `h̃` into the `ν+1`-tap target and the tail at delays `ν+1..L−1`.
///
/// The tail keeps its delay offset. It is `None` when `ν = L−1`.
pub fn split_target(h_tilde: &TapVector, nu: usize) -> Result<(TapVector, Option<TapVector>)> {
    let l = h_tilde.len();
    if nu >= l {
        return Err(Error::InvalidInput(format!("memory ν = {nu} must be below L = {l}")));
    }
    let taps = h_tilde.taps();
    let h_f = TapVector::causal(taps[..=nu].to_vec())?;
    let h_b = if nu + 1 < l {
        Some(TapVector::starting_at(taps[nu + 1..].to_vec(), (nu + 1) as isize)?)
    } else {
        None
    };
    Ok((h_f, h_b))
}

/// Channel description accepted from JSON configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChannelSpec {
    Explicit {
        #[serde(default)]
        name: Option<String>,
        taps_re: Vec<f64>,
        #[serde(default)]
        taps_im: Vec<f64>,
        #[serde(default)]
        n0: Option<f64>,
        #[serde(default)]
        snr_db: Option<f64>,
    },
    Preset {
        preset: String,
        #[serde(default)]
        snr_db: Option<f64>,
        /// Only for `preset: "iid"`.
        #[serde(default)]
        length: Option<usize>,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl ChannelSpec {
    pub fn preset(channel: StandardChannel, snr_db: f64) -> Self {
        ChannelSpec::Preset { preset: channel.to_string(), snr_db: Some(snr_db), length: None, seed: None }
    }

    pub fn taps(&self) -> Result<TapVector> {
        match self {
            ChannelSpec::Explicit { taps_re, taps_im, .. } => {
                if !taps_im.is_empty() && taps_im.len() != taps_re.len() {
                    return Err(Error::InvalidInput("taps_re and taps_im lengths differ".into()));
                }
                let taps = taps_re
                    .iter()
                    .enumerate()
                    .map(|(i, &re)| C64::new(re, taps_im.get(i).copied().unwrap_or(0.0)))
                    .collect();
                TapVector::causal(taps)
            }
            ChannelSpec::Preset { preset, length, seed, .. } => {
                if preset.eq_ignore_ascii_case("iid") {
                    random_iid_taps(length.unwrap_or(5), seed.unwrap_or(0))
                } else {
                    TapVector::from_real(preset.parse::<StandardChannel>()?.taps())
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            ChannelSpec::Explicit { name, .. } => name.clone().unwrap_or_else(|| "custom".into()),
            ChannelSpec::Preset { preset, seed, .. } if preset.eq_ignore_ascii_case("iid") => {
                format!("iid{}", seed.unwrap_or(0))
            }
            ChannelSpec::Preset { preset, .. } => preset.clone(),
        }
    }

    /// Builds the channel; an explicit `n0` wins over `snr_db`.
    pub fn to_cir(&self) -> Result<Cir> {
        let taps = self.taps()?;
        let (n0, snr) = match self {
            ChannelSpec::Explicit { n0, snr_db, .. } => (*n0, *snr_db),
            ChannelSpec::Preset { snr_db, .. } => (None, *snr_db),
        };
        match (n0, snr) {
            (Some(n0), _) => Cir::new(taps, n0),
            (None, Some(s)) => Cir::with_snr_db(taps, s),
            (None, None) => Err(Error::InvalidInput("channel needs either n0 or snr_db".into())),
        }
    }

    pub fn at_snr_db(&self, snr_db: f64) -> Result<Cir> {
        Cir::with_snr_db(self.taps()?, snr_db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{convolve, mean_integral, Spectrum};

    #[test]
    fn presets() {
        let e = standard_channel(StandardChannel::Epr4, 1.0).unwrap();
        assert_eq!(e.h(), &TapVector::from_real(&[0.5, 0.5, -0.5, -0.5]).unwrap());
        assert!((e.h().energy() - 1.0).abs() < 1e-15);
        let p = standard_channel("proakis_c".parse().unwrap(), 1.0).unwrap();
        assert_eq!(p.h(), &TapVector::from_real(&[0.227, 0.46, 0.688, 0.46, 0.227]).unwrap());
        assert!(matches!("foo".parse::<StandardChannel>(), Err(Error::UnknownChannel(_))));
        assert!(standard_channel(StandardChannel::Epr4, 0.0).is_err());
    }

    #[test]
    fn random_channel_energy_and_determinism() {
        for seed in 0..20 {
            let h = random_iid_taps(5, seed).unwrap();
            assert!((h.energy() - 1.0).abs() < 1e-12);
            assert_eq!(h, random_iid_taps(5, seed).unwrap());
        }
        assert_ne!(random_iid_taps(5, 1).unwrap(), random_iid_taps(5, 2).unwrap());
        let one = random_iid_taps(1, 9).unwrap();
        assert!((one.taps()[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn min_phase_fixed_point() {
        let cir = Cir::new(TapVector::from_real(&[1.0, 0.5]).unwrap(), 1.0).unwrap();
        let r = min_phase(&cir, &MinPhaseOptions::default()).unwrap();
        assert!(r.h_tilde.max_abs_diff(cir.h()) < 1e-6, "{:?}", r.h_tilde);
        assert!((r.w_hom.at_delay(0) - C64::new(1.0, 0.0)).norm() < 1e-6);
        assert!(r.w_hom.energy() - 1.0 < 1e-6);
    }

    #[test]
    fn min_phase_flips_maximum_phase_pair() {
        let cir = Cir::new(TapVector::from_real(&[0.5, 1.0]).unwrap(), 1.0).unwrap();
        let r = min_phase(&cir, &MinPhaseOptions::default()).unwrap();
        let expect = TapVector::from_real(&[1.0, 0.5]).unwrap();
        assert!(r.h_tilde.max_abs_diff(&expect) < 1e-4, "{:?}", r.h_tilde);
        // w_hom ⋆ h reproduces h̃ up to truncation
        let composed = convolve(&r.w_hom, cir.h());
        assert!(composed.max_abs_diff(&r.h_tilde) < 1e-6);
    }

    #[test]
    fn min_phase_preserves_magnitude_epr4() {
        let n0 = 0.1;
        let cir = standard_channel(StandardChannel::Epr4, n0).unwrap();
        let r = min_phase(&cir, &MinPhaseOptions::default()).unwrap();
        let g = FrequencyGrid::new(8192).unwrap();
        let ht = dtft(&r.h_tilde, g);
        let h = dtft(cir.h(), g);
        let diff = ht.zip_with(&h, |a, b| C64::new((a.norm_sqr() - b.norm_sqr() / n0).abs(), 0.0));
        assert!(mean_integral(&diff).re < 1e-4);
        for (n, w) in g.omegas().enumerate() {
            if w.abs() > 0.05 && (std::f64::consts::PI - w.abs()) > 0.05 {
                let d = (ht.values()[n].norm_sqr() - h.values()[n].norm_sqr() / n0).abs();
                assert!(d < 1e-4, "ω = {w}: {d}");
            }
        }
    }

    #[test]
    fn min_phase_front_loads_energy() {
        let mut channels: Vec<Cir> = (0..10).map(|s| random_iid_channel(5, s, 0.5).unwrap()).collect();
        channels.push(standard_channel(StandardChannel::ProakisC, 0.5).unwrap());
        for cir in channels {
            let h_tilde = min_phase_response(&cir, 8192).unwrap();
            let scaled = cir.h().scale(1.0 / cir.n0().sqrt());
            let mut acc_min = 0.0;
            let mut acc_orig = 0.0;
            for k in 0..cir.len() {
                acc_min += h_tilde.taps()[k].norm_sqr();
                acc_orig += scaled.taps()[k].norm_sqr();
                assert!(acc_min >= acc_orig - 1e-9, "k = {k}: {acc_min} < {acc_orig}");
            }
            let g = FrequencyGrid::new(8192).unwrap();
            let mag = dtft(&h_tilde, g).zip_with(&dtft(cir.h(), g), |a, b| {
                C64::new((a.norm_sqr() - b.norm_sqr() / cir.n0()).abs(), 0.0)
            });
            assert!(mean_integral(&mag).re < 1e-4);
        }
    }

    #[test]
    fn allpass_has_flat_magnitude() {
        let cir = standard_channel(StandardChannel::ProakisC, 0.25).unwrap();
        let r = min_phase(&cir, &MinPhaseOptions::default()).unwrap();
        let g = FrequencyGrid::new(1024).unwrap();
        let dev = |w: &TapVector| dtft(w, g).values().iter().map(|v| (v.norm() * 0.5 - 1.0).abs()).fold(0.0, f64::max);
        assert!(dev(&r.w_hom) <= r.allpass_deviation + 1e-12);
        assert!(r.allpass_deviation < 0.25);
        let long = MinPhaseOptions { prefilter_len: 513, ..Default::default() };
        let r = min_phase(&cir, &long).unwrap();
        assert!(r.allpass_deviation < 1e-3, "{}", r.allpass_deviation);
        let tight = MinPhaseOptions { allpass_tolerance: 0.01, ..Default::default() };
        assert!(matches!(min_phase(&cir, &tight), Err(Error::AllPassDeviation { .. })));
    }

    #[test]
    fn split_cases() {
        let h = TapVector::from_real(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let (f, b) = split_target(&h, 1).unwrap();
        assert_eq!(f, TapVector::from_real(&[1.0, 2.0]).unwrap());
        let b = b.unwrap();
        assert_eq!(b.first_delay(), 2);
        assert_eq!(b.at_delay(2), C64::new(3.0, 0.0));
        assert_eq!(b.at_delay(3), C64::new(4.0, 0.0));
        let (f, b) = split_target(&h, 3).unwrap();
        assert_eq!(f.len(), 4);
        assert!(b.is_none());
        let (f, _) = split_target(&h, 0).unwrap();
        assert_eq!(f.len(), 1);
        assert!(split_target(&h, 4).is_err());
    }

    #[test]
    fn split_reconstructs() {
        let h = random_iid_taps(6, 3).unwrap();
        for nu in 0..6 {
            let (f, b) = split_target(&h, nu).unwrap();
            for d in 0..6 {
                let sum = f.at_delay(d) + b.as_ref().map_or(C64::new(0.0, 0.0), |b| b.at_delay(d));
                assert_eq!(sum, h.at_delay(d));
            }
        }
    }

    #[test]
    fn channel_json_forms() {
        let spec: ChannelSpec = serde_json::from_str(r#"{"preset":"epr4","snr_db":10}"#).unwrap();
        let cir = spec.to_cir().unwrap();
        assert!((cir.n0() - 0.1).abs() < 1e-15);
        let spec: ChannelSpec =
            serde_json::from_str(r#"{"name":"x","taps_re":[1,0.5],"taps_im":[0,0.1],"n0":0.3}"#).unwrap();
        let cir = spec.to_cir().unwrap();
        assert_eq!(cir.h().taps()[1], C64::new(0.5, 0.1));
        assert_eq!(cir.n0(), 0.3);
        let spec: ChannelSpec = serde_json::from_str(r#"{"preset":"nope","snr_db":1}"#).unwrap();
        assert!(matches!(spec.to_cir(), Err(Error::UnknownChannel(_))));
        let spec: ChannelSpec = serde_json::from_str(r#"{"preset":"iid","seed":4,"length":5}"#).unwrap();
        assert!((spec.at_snr_db(3.0).unwrap().h().energy() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_spectrum_helper() {
        let g = FrequencyGrid::new(4).unwrap();
        assert_eq!(Spectrum::constant(g, C64::new(1.0, 0.0)).values().len(), 4);
    }
}
