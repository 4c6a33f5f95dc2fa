use std::time::Instant;

use chanshort::channel::{random_iid_taps, standard_channel, ChannelSpec, Cir, StandardChannel};
use chanshort::design::{
    fom_gradient, milb_general, optimal_b, optimal_w, optimize_fom, optimize_ubm, theorem1_rate, DesignOptions,
    Shortener,
};
use chanshort::error::Result;
use chanshort::modulation::Modulation;
use chanshort::rates::{rate_report, RateReport};
use chanshort::sim::{delay_sweep, run, sigma_experiment, transmit, SimConfig, SimResult};
use chanshort::sove::{equalize_prefiltered, DetectorModel, MetricKind, TrellisConfig};
use chanshort::{Exec, FrequencyGrid, TapVector, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracles::{exhaustive_llrs, fd_gradient, root_flip_min_phase};
use crate::{Budget, Outcome};

const SWEEP_SNRS: [f64; 11] = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0];
const IID_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const IID_LEN: usize = 5;

fn rate_grid() -> FrequencyGrid {
    FrequencyGrid::default()
}

fn n0(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// The two named channels plus the random IID realizations.
pub fn test_channels() -> Vec<(String, TapVector)> {
    let mut out: Vec<(String, TapVector)> = [StandardChannel::Epr4, StandardChannel::ProakisC]
        .into_iter()
        .map(|c| (c.to_string(), TapVector::from_real(c.taps()).expect("preset taps")))
        .collect();
    out.extend(IID_SEEDS.iter().map(|&s| (format!("iid{s}"), random_iid_taps(IID_LEN, s).expect("iid taps"))));
    out
}

fn random_target(rng: &mut ChaCha8Rng, len: usize) -> TapVector {
    let taps = (0..len).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    TapVector::causal(taps).expect("finite taps")
}

/// Gradient function under test; the acceptance run passes the library's.
pub type GradientFn = fn(&TapVector, &Cir, f64, FrequencyGrid) -> Result<Vec<C64>>;

pub fn gradient_oracle(grad: GradientFn) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let grid = rate_grid();
    let channels = [StandardChannel::Epr4, StandardChannel::ProakisC];
    let mut worst: f64 = 0.0;
    for draw in 0..50 {
        let ch = channels[draw % 2];
        let sigma = [0.0, 0.5, 1.0][rng.random_range(0..3)];
        let snr = [5.0, 10.0, 15.0][rng.random_range(0..3)];
        let nu = rng.random_range(1..ch.taps().len());
        let cir = standard_channel(ch, n0(snr))?;
        let f = random_target(&mut rng, nu + 1);
        let g = grad(&f, &cir, sigma, grid)?;
        let fd = fd_gradient(&f, &cir, sigma, grid, 1e-5)?;
        for (a, b) in g.iter().zip(&fd) {
            for (x, y) in [(a.re, b.re), (a.im, b.im)] {
                worst = worst.max((x - y).abs() / x.abs().max(1e-6));
            }
        }
    }
    Ok(Outcome::new(1, "gradient matches central differences", worst < 1e-5, format!("max relative error {worst:.2e} (< 1e-5)")))
}

pub fn theorem_consistency() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let grid = rate_grid();
    let mut worst: f64 = 0.0;
    for ch in [StandardChannel::Epr4, StandardChannel::ProakisC] {
        for _ in 0..20 {
            let sigma = rng.random_range(0.0..=1.0);
            let snr = rng.random_range(0.0..20.0);
            let nu = rng.random_range(0..ch.taps().len());
            let cir = standard_channel(ch, n0(snr))?;
            let f = random_target(&mut rng, nu + 1);
            let b = optimal_b(&f, &cir, sigma, grid)?;
            let w = optimal_w(&f, b.as_ref(), &cir, sigma, grid, grid.n_points())?;
            let direct = milb_general(&w, &f, b.as_ref(), &cir, sigma, grid);
            let closed = theorem1_rate(&f, &cir, sigma, grid)?;
            worst = worst.max((direct - closed).abs() / closed.abs().max(1e-300));
        }
    }
    Ok(Outcome::new(
        2,
        "closed-form rate equals the general bound at the optimal filters",
        worst < 1e-8,
        format!("max relative difference {worst:.2e} (< 1e-8)"),
    ))
}

/// Rate reports over the test channels and SNR sweep at `ν = 1`.
pub struct RateSweep {
    pub rows: Vec<(String, RateReport)>,
    pub seconds: f64,
}

pub fn rate_sweep(exec: Exec) -> Result<RateSweep> {
    let start = Instant::now();
    let opts = DesignOptions::default();
    let jobs: Vec<(String, TapVector, f64)> = test_channels()
        .into_iter()
        .flat_map(|(name, h)| SWEEP_SNRS.iter().map(move |&s| (name.clone(), h.clone(), s)))
        .collect();
    let rows = exec
        .map(jobs.len(), |i| {
            let (name, h, snr) = &jobs[i];
            rate_report(&Cir::with_snr_db(h.clone(), *snr)?, 1, &opts).map(|r| (name.clone(), r))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(RateSweep { rows, seconds: start.elapsed().as_secs_f64() })
}

pub fn rate_inequalities(sweep: &RateSweep) -> Outcome {
    let tol = 1e-9;
    let mut worst: Vec<(&'static str, f64, String)> = Vec::new();
    let mut checked = 0;
    for (name, r) in &sweep.rows {
        for ineq in r.inequalities() {
            checked += 1;
            let s = ineq.slack();
            match worst.iter_mut().find(|w| w.0 == ineq.name) {
                Some(w) if s < w.1 => *w = (ineq.name, s, format!("{name} {:.1} dB", r.snr_db)),
                Some(_) => {}
                None => worst.push((ineq.name, s, format!("{name} {:.1} dB", r.snr_db))),
            }
        }
    }
    let failed: Vec<String> = worst
        .iter()
        .filter(|w| w.1 < -tol)
        .map(|w| {
            let n = sweep.rows.iter().flat_map(|(_, r)| r.inequalities()).filter(|i| i.name == w.0 && i.slack() < -tol).count();
            format!("{} violated {n}x, worst slack {:.3e} at {}", w.0, w.1, w.2)
        })
        .collect();
    let pass = failed.is_empty() && sweep.seconds < 300.0;
    let detail = if failed.is_empty() {
        format!("{checked} inequalities hold with slack >= -1e-9 in {:.1} s", sweep.seconds)
    } else {
        format!("{} ({checked} checked, {:.1} s)", failed.join("; "), sweep.seconds)
    };
    Outcome::new(3, "rate inequality suite", pass, detail)
}

pub fn ubm_stationarity(sweep: &RateSweep) -> Outcome {
    let worst = sweep.rows.iter().map(|(_, r)| (r.ubm_stationarity + 1.0).abs()).fold(0.0, f64::max);
    Outcome::new(
        4,
        "UBM optimum is stationary",
        worst < 1e-6,
        format!("max |mean(M(1+G)) + 1| = {worst:.2e} over {} designs (< 1e-6)", sweep.rows.len()),
    )
}

pub fn brute_force_equalizer() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let k = 8;
    let modulation = Modulation::Bpsk;
    let config = TrellisConfig::new(2, 8, modulation, MetricKind::ForneyFeedback)?;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let raw: Vec<C64> = (0..3).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let e: f64 = raw.iter().map(|t| t.norm_sqr()).sum();
        let h = TapVector::causal(raw.iter().map(|t| t / e.sqrt()).collect())?;
        let cir = Cir::new(h.clone(), 0.5)?;
        let bits: Vec<bool> = (0..k).map(|_| rng.random()).collect();
        let (_, y) = transmit(&bits, modulation, &cir, &mut rng)?;
        let model = DetectorModel::forney(&h, None)?;
        let got = equalize_prefiltered(&y, &model, &config, k)?.llrs;
        let want = exhaustive_llrs(&y, h.taps(), modulation, k);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(Outcome::new(
        5,
        "trellis LLRs equal exhaustive enumeration",
        worst < 1e-10,
        format!("max |LLR difference| {worst:.2e} over 10 channels (< 1e-10)"),
    ))
}

pub fn fom_convergence() -> Result<Outcome> {
    let opts = DesignOptions::default();
    let mut worst_iter = 0;
    let mut failures = Vec::new();
    for ch in [StandardChannel::Epr4, StandardChannel::ProakisC] {
        for sigma in [0.5, 1.0] {
            for snr in [10.0, 12.0, 14.0, 16.0] {
                let r = optimize_fom(&standard_channel(ch, n0(snr))?, 1, sigma, &opts)?;
                let settled = r
                    .history
                    .windows(2)
                    .position(|w| (w[1] - w[0]).abs() / w[1].abs().max(1e-300) < 1e-6)
                    .map(|i| i + 1)
                    .or(r.converged.then_some(r.iterations()));
                match settled {
                    Some(i) if i <= 10 => worst_iter = worst_iter.max(i),
                    other => failures.push(format!("{ch} σ={sigma} {snr} dB: {other:?}")),
                }
            }
        }
    }
    let pass = failures.is_empty();
    let detail = if pass {
        format!("improvement below 1e-6 within {worst_iter} iterations at every point (<= 10)")
    } else {
        failures.join("; ")
    };
    Ok(Outcome::new(6, "FOM ascent converges within 10 iterations", pass, detail))
}

fn sim_config(ch: StandardChannel, modulation: Modulation, shortener: Shortener, blocks: usize, seed: u64) -> SimConfig {
    let mut c = SimConfig::new(ChannelSpec::preset(ch, 0.0), modulation, shortener, 1);
    c.n_blocks = blocks;
    c.seed = seed;
    c
}

fn grid_points(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

/// Largest MI standard error (normalized units) at the two SNR points
/// bracketing `target` for delay `d`.
fn bracket_se(rows: &[SimResult], d: usize, target: f64) -> f64 {
    let r: Vec<&SimResult> = rows.iter().filter(|r| r.d == d).collect();
    r.windows(2)
        .find(|w| (w[0].mi_norm - target) * (w[1].mi_norm - target) <= 0.0)
        .map(|w| w.iter().map(|r| r.se_mi / r.modulation.bits_per_symbol() as f64).fold(0.0, f64::max))
        .unwrap_or(f64::INFINITY)
}

pub fn delay_gain(budget: &Budget) -> Result<Outcome> {
    let start = Instant::now();
    let l = StandardChannel::Epr4.taps().len();
    let (short, mid, long) = (l - 1, l + 2, l + 20);
    let mut cfg = sim_config(StandardChannel::Epr4, Modulation::Qam16, Shortener::Hom, budget.delay_blocks, 7);
    cfg.snr_db = grid_points(16.0, 20.0, 1.0);
    let sweep = delay_sweep(&cfg, &[short, mid, long], 0.5)?;
    let secs = start.elapsed().as_secs_f64();
    let snr = |d| sweep.snr_for(d);
    let (Some(s_short), Some(s_mid), Some(s_long)) = (snr(short), snr(mid), snr(long)) else {
        return Ok(Outcome::new(7, "decision delay gain", false, format!("MI 0.5 not bracketed: {:?}", sweep.snr_at_target)));
    };
    let gain = s_short - s_mid;
    let further = s_mid - s_long;
    let se = [short, mid, long].iter().map(|&d| bracket_se(&sweep.rows, d, 0.5)).fold(0.0, f64::max);
    let pass = (gain - 0.4).abs() <= 0.2 && further < 0.15 && se < 0.005 && secs < 1800.0;
    Ok(Outcome::new(
        7,
        "decision delay gain",
        pass,
        format!(
            "SNR@MI0.5: D={short} {s_short:.3} dB, D={mid} {s_mid:.3} dB, D={long} {s_long:.3} dB; \
             gain {gain:.3} dB (0.4 ± 0.2), further {further:.3} dB (< 0.15), max SE {se:.4} (< 0.005), \
             {} blocks/point, {secs:.0} s",
            budget.delay_blocks
        ),
    ))
}

pub fn sigma_choice(budget: &Budget) -> Result<Outcome> {
    let start = Instant::now();
    let base = sim_config(StandardChannel::Epr4, Modulation::Psk8, Shortener::Fom { sigma: 0.0 }, budget.sigma_pilot_blocks, 8);
    let scan = grid_points(8.0, 20.0, 0.5);
    let pilot = |sigma: f64| -> Result<Vec<SimResult>> {
        run(&SimConfig { shortener: Shortener::Fom { sigma }, snr_db: scan.clone(), ..base.clone() })
    };
    let p0 = pilot(0.0)?;
    let p1 = pilot(1.0)?;
    let in_range = |ser: f64| (1e-3..=0.3).contains(&ser);
    let low = p0.iter().find(|r| in_range(r.ser)).map(|r| r.snr_db);
    let high = p1.iter().rev().find(|r| in_range(r.ser)).map(|r| r.snr_db);
    let (Some(low), Some(high)) = (low, high) else {
        return Ok(Outcome::new(8, "feedback quality choice", false, "no SNR with SER in [1e-3, 0.3]".into()));
    };
    let sigma_grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let cfg = SimConfig { n_blocks: budget.sigma_blocks, ..base };
    let gap_at = |snr: f64, sigma_in: f64| -> Result<(f64, f64, f64)> {
        let rows = sigma_experiment(&cfg, snr, &sigma_grid)?;
        let best = rows.iter().fold(&rows[0], |a, b| if b.sigma_out > a.sigma_out { b } else { a });
        let own = rows.iter().find(|r| r.sigma_in == Some(sigma_in)).expect("grid point").sigma_out;
        Ok((best.sigma_out - own, best.sigma_in.unwrap_or(f64::NAN), own))
    };
    let (gap_hi, arg_hi, own_hi) = gap_at(high, 1.0)?;
    let (gap_lo, arg_lo, own_lo) = gap_at(low, 0.0)?;
    let secs = start.elapsed().as_secs_f64();
    let pass = gap_hi <= 0.01 && gap_lo <= 0.01 && secs < 1200.0;
    Ok(Outcome::new(
        8,
        "feedback quality choice",
        pass,
        format!(
            "high {high} dB: σ_out(1) = {own_hi:.4}, best σ_in {arg_hi} ahead by {gap_hi:.4}; \
             low {low} dB: σ_out(0) = {own_lo:.4}, best σ_in {arg_lo} ahead by {gap_lo:.4} (<= 0.01); \
             {} blocks/point, {secs:.0} s",
            budget.sigma_blocks
        ),
    ))
}

pub fn mi_crossover(budget: &Budget) -> Result<Outcome> {
    let start = Instant::now();
    let snrs = grid_points(10.0, 30.0, 4.0);
    let measure = |shortener| -> Result<Vec<SimResult>> {
        let mut c = sim_config(StandardChannel::ProakisC, Modulation::Qam16, shortener, budget.crossover_blocks, 9);
        c.snr_db = snrs.clone();
        run(&c)
    };
    let fom = measure(Shortener::Fom { sigma: 1.0 })?;
    let ubm = measure(Shortener::Ubm)?;
    let mut high = 0;
    let mut low = 0;
    let mut bad = Vec::new();
    let mut cells = Vec::new();
    for (a, b) in fom.iter().zip(&ubm) {
        let se = (a.se_mi.powi(2) + b.se_mi.powi(2)).sqrt() / 4.0;
        let margin = 2.0 * se;
        cells.push(format!("{}dB {:.3}/{:.3}", a.snr_db, a.mi_norm, b.mi_norm));
        if a.mi_norm > 0.6 && b.mi_norm > 0.6 {
            high += 1;
            if a.mi_norm - b.mi_norm <= margin {
                bad.push(format!("{} dB: FOM not ahead", a.snr_db));
            }
        } else if a.mi_norm < 0.4 && b.mi_norm < 0.4 {
            low += 1;
            if b.mi_norm - a.mi_norm <= margin {
                bad.push(format!("{} dB: UBM not ahead", a.snr_db));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = bad.is_empty() && high > 0 && low > 0 && secs < 1800.0;
    Ok(Outcome::new(
        9,
        "MI crossover between FOM(σ=1) and UBM",
        pass,
        format!(
            "FOM/UBM normalized MI: {}; {high} high and {low} low points{}; {} blocks/point, {secs:.0} s",
            cells.join(", "),
            if bad.is_empty() { String::new() } else { format!("; {}", bad.join("; ")) },
            budget.crossover_blocks
        ),
    ))
}

pub fn min_phase_invariance() -> Result<Outcome> {
    let opts = DesignOptions::default();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (_, h) in test_channels() {
        let hm = root_flip_min_phase(&h)?;
        for snr in [5.0, 15.0] {
            let a = Cir::new(h.clone(), n0(snr))?;
            let b = Cir::new(hm.clone(), n0(snr))?;
            let fa = optimize_fom(&a, 1, 0.0, &opts)?.milb;
            let fb = optimize_fom(&b, 1, 0.0, &opts)?.milb;
            let ua = optimize_ubm(&a, 1, &opts)?.milb;
            let ub = optimize_ubm(&b, 1, &opts)?.milb;
            worst = worst.max((fa - fb).abs()).max((ua - ub).abs());
            count += 1;
        }
    }
    Ok(Outcome::new(
        10,
        "rates are invariant under minimum-phase conversion",
        worst < 1e-6,
        format!("max |Δ rate| {worst:.2e} nats over {count} channel/SNR pairs (< 1e-6)"),
    ))
}

/// Library gradient, the reference for criterion 1.
pub fn library_gradient(f: &TapVector, cir: &Cir, sigma: f64, grid: FrequencyGrid) -> Result<Vec<C64>> {
    fom_gradient(f, cir, sigma, grid)
}
