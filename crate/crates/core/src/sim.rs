//! Monte Carlo link simulation: transmission over the ISI channel,
//! equalization, and SER/BER/measured-MI estimation.
//!
//! Block `i` of every run draws from the ChaCha8 stream `i` of the
//! configured seed. Points that differ only in SNR, shortener or decision
//! delay therefore see the same bits and the same unit-variance noise
//! draws.

use std::io::{self, Write};
use std::f64::consts::LN_2;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSpec, Cir};
use crate::design::{design_shortener, DesignOptions, Shortener, ShortenerFilters, TRUNCATION_LIMIT};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::modulation::Modulation;
use crate::sove::{equalize, LlrFrame, TrellisConfig};
use crate::spectral::C64;

pub const DEFAULT_BLOCK_LEN: usize = 1064;
pub const MIN_BLOCK_LEN: usize = 64;

/// Header comment of the results CSV.
pub const RESULTS_CSV_VERSION: &str = "# chanshort results v1";
pub const RESULT_COLUMNS: [&str; 12] = [
    "shortener",
    "sigma_in",
    "modulation",
    "snr_db",
    "d",
    "ser",
    "ber",
    "mi_bits",
    "mi_norm",
    "sigma_out",
    "se_mi",
    "n_blocks",
];

fn default_block_len() -> usize {
    DEFAULT_BLOCK_LEN
}

fn default_n_blocks() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub channel: ChannelSpec,
    pub modulation: Modulation,
    pub shortener: Shortener,
    pub nu: usize,
    /// Decision delay; `L + 2` when absent.
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default = "default_block_len")]
    pub block_len: usize,
    #[serde(default = "default_n_blocks")]
    pub n_blocks: usize,
    #[serde(default)]
    pub snr_db: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip)]
    pub design: DesignOptions,
    #[serde(skip)]
    pub exec: Exec,
}

impl SimConfig {
    pub fn new(channel: ChannelSpec, modulation: Modulation, shortener: Shortener, nu: usize) -> Self {
        Self {
            channel,
            modulation,
            shortener,
            nu,
            d: None,
            block_len: DEFAULT_BLOCK_LEN,
            n_blocks: default_n_blocks(),
            snr_db: Vec::new(),
            seed: 0,
            design: DesignOptions::default(),
            exec: Exec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_len < MIN_BLOCK_LEN {
            return Err(Error::BlockTooShort(format!("block_len {} < {MIN_BLOCK_LEN}", self.block_len)));
        }
        if self.n_blocks == 0 {
            return Err(Error::InvalidInput("n_blocks must be at least 1".into()));
        }
        if let Some(d) = self.d {
            if d < self.nu {
                return Err(Error::InvalidInput(format!("decision delay D = {d} is below ν = {}", self.nu)));
            }
        }
        if let Shortener::Fom { sigma } = self.shortener {
            if !(0.0..=1.0).contains(&sigma) {
                return Err(Error::InvalidInput(format!("σ = {sigma} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn decision_delay(&self, channel_len: usize) -> usize {
        self.d.unwrap_or(channel_len + 2)
    }
}

/// Aggregated measurements at one SNR point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub shortener: String,
    pub sigma_in: Option<f64>,
    pub modulation: Modulation,
    pub snr_db: f64,
    pub d: usize,
    pub ser: f64,
    pub ber: f64,
    pub mi_bits: f64,
    pub mi_norm: f64,
    /// `1 − ser`.
    pub sigma_out: f64,
    pub se_mi: f64,
    pub se_ser: f64,
    pub n_blocks: usize,
    pub n_symbols: usize,
    /// Set when the design stage returned a usable but degraded result.
    pub design_note: Option<String>,
}

/// Gray-maps `bits`, passes the symbols through `h` followed by `L − 1`
/// zero guard symbols, and adds circular complex Gaussian noise of
/// variance `N0` per sample. Returns the symbols and the `K + L − 1`
/// received samples.
pub fn transmit<R: Rng + ?Sized>(
    bits: &[bool],
    modulation: Modulation,
    cir: &Cir,
    rng: &mut R,
) -> Result<(Vec<C64>, Vec<C64>)> {
    let x = modulation.map(bits)?;
    let h = cir.h().taps();
    let n_out = x.len() + h.len() - 1;
    let scale = (cir.n0() / 2.0).sqrt();
    let y = (0..n_out)
        .map(|k| {
            let lo = k.saturating_sub(x.len() - 1);
            let hi = k.min(h.len() - 1);
            let clean: C64 = (lo..=hi).map(|l| h[l] * x[k - l]).sum();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            clean + C64::new(re, im) * scale
        })
        .collect();
    Ok((x, y))
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Sum over bits of `log2 p(true bit | LLR)`.
fn log2_likelihood_sum(llrs: &[f64], true_bits: &[bool]) -> f64 {
    llrs.iter()
        .zip(true_bits)
        .map(|(&l, &b)| {
            let first = if b { l } else { 0.0 };
            (first - softplus(l)) / LN_2
        })
        .sum()
}

/// Measured mutual information in bits/symbol:
/// `log2|X| + mean over symbols of Σ_bits log2 p(true bit | LLR)`.
pub fn measured_mi(frame: &LlrFrame, true_bits: &[bool]) -> Result<f64> {
    if frame.llrs.len() != true_bits.len() || frame.llrs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} LLRs for {} bits",
            frame.llrs.len(),
            true_bits.len()
        )));
    }
    let m = frame.bits_per_symbol as f64;
    let per_bit = log2_likelihood_sum(&frame.llrs, true_bits) / true_bits.len() as f64;
    Ok(m + m * per_bit)
}

#[derive(Debug, Clone, Copy, Default)]
struct BlockStats {
    symbol_errors: usize,
    bit_errors: usize,
    mi_bits: f64,
}

fn block_rng(seed: u64, block: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block as u64);
    rng
}

fn run_block(
    cfg: &SimConfig,
    cir: &Cir,
    filters: &ShortenerFilters,
    trellis: &TrellisConfig,
    block: usize,
) -> Result<BlockStats> {
    let mut rng = block_rng(cfg.seed, block);
    let m = cfg.modulation.bits_per_symbol();
    let bits: Vec<bool> = (0..cfg.block_len * m).map(|_| rng.random()).collect();
    let (_, y) = transmit(&bits, cfg.modulation, cir, &mut rng)?;
    let frame = equalize(&y, filters, trellis, cfg.block_len)?;
    let decided = frame.hard_bits();
    let bit_errors = decided.iter().zip(&bits).filter(|(a, b)| a != b).count();
    let symbol_errors = decided.chunks(m).zip(bits.chunks(m)).filter(|(a, b)| a != b).count();
    Ok(BlockStats { symbol_errors, bit_errors, mi_bits: measured_mi(&frame, &bits)? })
}

fn mean_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Designs the shortener for `snr_db`; the note flags degraded designs.
pub fn design_point(cfg: &SimConfig, snr_db: f64) -> Result<(Cir, ShortenerFilters, Option<String>)> {
    cfg.validate()?;
    let cir = cfg.channel.at_snr_db(snr_db)?;
    let filters = design_shortener(&cir, cfg.nu, cfg.shortener, &cfg.design)?;
    let note = match &filters {
        ShortenerFilters::Fom(f) if !f.converged => Some(format!("FOM stopped after {} iterations", f.iterations())),
        ShortenerFilters::Fom(f) if f.truncation_loss > TRUNCATION_LIMIT => {
            Some(format!("prefilter truncation loss {:.2e}", f.truncation_loss))
        }
        _ => None,
    };
    if let Some(n) = &note {
        warn!("{} at {snr_db} dB: {n}", cfg.channel.name());
    }
    Ok((cir, filters, note))
}

/// Runs `cfg.n_blocks` blocks with fixed filters and decision delay `d`.
pub fn simulate_with(
    cfg: &SimConfig,
    cir: &Cir,
    filters: &ShortenerFilters,
    d: usize,
    snr_db: f64,
) -> Result<SimResult> {
    let trellis = TrellisConfig::new(cfg.nu, d, cfg.modulation, TrellisConfig::metric_for(filters))?;
    let stats = cfg
        .exec
        .map(cfg.n_blocks, |i| run_block(cfg, cir, filters, &trellis, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let k = cfg.block_len as f64;
    let m = cfg.modulation.bits_per_symbol();
    let n_symbols = cfg.block_len * cfg.n_blocks;
    let ser_blocks: Vec<f64> = stats.iter().map(|s| s.symbol_errors as f64 / k).collect();
    let mi_blocks: Vec<f64> = stats.iter().map(|s| s.mi_bits).collect();
    let (ser, se_ser) = mean_and_se(&ser_blocks);
    let (mi_bits, se_mi) = mean_and_se(&mi_blocks);
    let bit_errors: usize = stats.iter().map(|s| s.bit_errors).sum();
    Ok(SimResult {
        shortener: cfg.shortener.kind().to_string(),
        sigma_in: cfg.shortener.sigma(),
        modulation: cfg.modulation,
        snr_db,
        d,
        ser,
        ber: bit_errors as f64 / (n_symbols * m) as f64,
        mi_bits,
        mi_norm: mi_bits / m as f64,
        sigma_out: 1.0 - ser,
        se_mi,
        se_ser,
        n_blocks: cfg.n_blocks,
        n_symbols,
        design_note: None,
    })
}

/// Designs the filters once and simulates one SNR point.
pub fn run_point(cfg: &SimConfig, snr_db: f64) -> Result<SimResult> {
    let (cir, filters, note) = design_point(cfg, snr_db)?;
    let mut r = simulate_with(cfg, &cir, &filters, cfg.decision_delay(cir.len()), snr_db)?;
    r.design_note = note;
    Ok(r)
}

/// One row per configured SNR point.
pub fn run(cfg: &SimConfig) -> Result<Vec<SimResult>> {
    if cfg.snr_db.is_empty() {
        return Err(Error::InvalidInput("no SNR points configured".into()));
    }
    cfg.snr_db.iter().map(|&s| run_point(cfg, s)).collect()
}

/// Redesigns the FOM shortener for every `σ_in` and measures
/// `σ_out = 1 − SER` at `snr_db`.
pub fn sigma_experiment(cfg: &SimConfig, snr_db: f64, sigma_grid: &[f64]) -> Result<Vec<SimResult>> {
    if let Some(s) = sigma_grid.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidInput(format!("σ_in = {s} is outside [0, 1]")));
    }
    sigma_grid
        .iter()
        .map(|&sigma| {
            let c = SimConfig { shortener: Shortener::Fom { sigma }, ..cfg.clone() };
            run_point(&c, snr_db)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySweep {
    pub target_mi_norm: f64,
    /// Rows ordered by `d`, then SNR.
    pub rows: Vec<SimResult>,
    /// SNR reaching the target per delay; `None` when the curve does not
    /// cross it inside the SNR range.
    pub snr_at_target: Vec<(usize, Option<f64>)>,
}

impl DelaySweep {
    pub fn snr_for(&self, d: usize) -> Option<f64> {
        self.snr_at_target.iter().find(|(x, _)| *x == d).and_then(|(_, s)| *s)
    }
}

/// SNR where the normalized MI first reaches `target`, by linear
/// interpolation between neighbouring points (ordered by SNR).
pub fn snr_at_mi(rows: &[SimResult], target: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.snr_db, r.mi_norm)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let i = pts.iter().position(|&(_, mi)| mi >= target)?;
    if i == 0 {
        return (pts[0].1 == target).then_some(pts[0].0);
    }
    let (s0, m0) = pts[i - 1];
    let (s1, m1) = pts[i];
    Some(s0 + (target - m0) * (s1 - s0) / (m1 - m0))
}

/// MI-vs-SNR curves for each decision delay, with filters designed once
/// per SNR point.
pub fn delay_sweep(cfg: &SimConfig, d_values: &[usize], target_mi_norm: f64) -> Result<DelaySweep> {
    if cfg.snr_db.is_empty() {
        return Err(Error::InvalidInput("no SNR points configured".into()));
    }
    if let Some(d) = d_values.iter().find(|&&d| d < cfg.nu) {
        return Err(Error::InvalidInput(format!("decision delay D = {d} is below ν = {}", cfg.nu)));
    }
    let designs = cfg.snr_db.iter().map(|&s| design_point(cfg, s)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut snr_at_target = Vec::new();
    for &d in d_values {
        let mut curve = Vec::new();
        for (&snr, (cir, filters, note)) in cfg.snr_db.iter().zip(&designs) {
            let mut r = simulate_with(cfg, cir, filters, d, snr)?;
            r.design_note = note.clone();
            curve.push(r);
        }
        snr_at_target.push((d, snr_at_mi(&curve, target_mi_norm)));
        rows.extend(curve);
    }
    Ok(DelaySweep { target_mi_norm, rows, snr_at_target })
}

pub fn write_results_csv<W: Write>(mut out: W, rows: &[SimResult]) -> io::Result<()> {
    writeln!(out, "{RESULTS_CSV_VERSION}")?;
    writeln!(out, "{}", RESULT_COLUMNS.join(","))?;
    for r in rows {
        let sigma = r.sigma_in.map(|s| s.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.shortener,
            sigma,
            r.modulation,
            r.snr_db,
            r.d,
            r.ser,
            r.ber,
            r.mi_bits,
            r.mi_norm,
            r.sigma_out,
            r.se_mi,
            r.n_blocks
        )?;
    }
    Ok(())
}
