use nalgebra::{DMatrix, DVector};

use super::{check_nu, ChannelSpectra, DesignOptions, UbmFilters};
use crate::channel::Cir;
use crate::error::{Error, Result};
use crate::spectral::{centered_range, idtft, FrequencyGrid, Spectrum, TapVector, C64};

/// Lower margin kept on `1 + G(ω)` by the optimizer.
pub const UBM_DOMAIN_MARGIN: f64 = 1e-9;
/// Largest tolerated `|mean(M(1+G)) + 1|` at the optimizer output.
const STATIONARITY_TOL: f64 = 1e-6;
const MAX_NEWTON: usize = 100;

/// Real basis functions of `G(ω) = g_0 + 2 Re Σ_k g_k e^{jkω}`, ordered
/// `g_0, Re g_1..g_ν, Im g_1..g_ν`.
fn basis(grid: FrequencyGrid, nu: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![1.0; grid.n_points()]];
    for k in 1..=nu {
        out.push(grid.omegas().map(|w| 2.0 * (k as f64 * w).cos()).collect());
    }
    for k in 1..=nu {
        out.push(grid.omegas().map(|w| -2.0 * (k as f64 * w).sin()).collect());
    }
    out
}

fn params_to_taps(y: &DVector<f64>, nu: usize) -> TapVector {
    let mut taps = vec![C64::new(y[0], 0.0)];
    taps.extend((1..=nu).map(|k| C64::new(y[k], y[k + nu])));
    TapVector::causal(taps).expect("finite correlation taps")
}

fn g_values(cs: &ChannelSpectra, g: &TapVector) -> Result<Vec<f64>> {
    if g.first_delay() != 0 {
        return Err(Error::InvalidInput("correlation taps start at delay 0".into()));
    }
    let g0 = g.taps()[0];
    if g0.im.abs() > 1e-12 {
        return Err(Error::InvalidInput(format!("g_0 must be real, got {g0}")));
    }
    let tail = if g.len() > 1 { cs.eval(&g.taps()[1..], 1) } else { vec![C64::new(0.0, 0.0); cs.n()] };
    Ok(tail.iter().map(|t| g0.re + 2.0 * t.re).collect())
}

fn rate_from_g(cs: &ChannelSpectra, gv: &[f64]) -> f64 {
    let s: f64 = gv.iter().zip(&cs.m).map(|(&g, &m)| (1.0 + g).ln() + m * (1.0 + g)).sum();
    1.0 + s / gv.len() as f64
}

/// Rate of the Ungerboeck-model detector with correlation taps `g`
/// (nats/symbol). Fails when `1 + G(ω) ≤ 0` anywhere on the grid.
pub fn ubm_rate(g: &TapVector, cir: &Cir, grid: FrequencyGrid) -> Result<f64> {
    let cs = ChannelSpectra::new(cir, grid);
    let gv = g_values(&cs, g)?;
    let min = gv.iter().map(|g| 1.0 + g).fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        return Err(Error::DomainViolation { min });
    }
    Ok(rate_from_g(&cs, &gv))
}

/// `mean(M(1+G))`; equals −1 at the rate-maximizing `g`.
pub fn ubm_stationarity(g: &TapVector, cir: &Cir, grid: FrequencyGrid) -> Result<f64> {
    let cs = ChannelSpectra::new(cir, grid);
    let gv = g_values(&cs, g)?;
    Ok(ChannelSpectra::mean(&gv.iter().zip(&cs.m).map(|(g, m)| m * (1.0 + g)).collect::<Vec<_>>()))
}

/// Maximizes the concave UBM rate over `g_0..g_ν` by Newton's method with
/// backtracking inside `1 + G ≥ UBM_DOMAIN_MARGIN`, then forms the matching
/// prefilter `V = H*(1+G)/(N0+|H|²)`.
pub fn optimize_ubm(cir: &Cir, nu: usize, opts: &DesignOptions) -> Result<UbmFilters> {
    check_nu(cir, nu)?;
    let cs = ChannelSpectra::new(cir, opts.grid);
    let c = basis(opts.grid, nu);
    let d = c.len();
    let n = cs.n();
    let mut y = DVector::<f64>::zeros(d);
    let mut gv = vec![0.0; n];
    let mut val = rate_from_g(&cs, &gv);
    let mut iterations = 0;

    for _ in 0..MAX_NEWTON {
        let r: Vec<f64> = gv.iter().zip(&cs.m).map(|(&g, &m)| 1.0 / (1.0 + g) + m).collect();
        let q: Vec<f64> = gv.iter().map(|&g| 1.0 / ((1.0 + g) * (1.0 + g))).collect();
        let grad = DVector::from_fn(d, |i, _| c[i].iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / n as f64);
        let neg_hess = DMatrix::from_fn(d, d, |i, j| {
            c[i].iter().zip(&c[j]).zip(&q).map(|((a, b), w)| a * b * w).sum::<f64>() / n as f64
        });
        let Some(chol) = neg_hess.cholesky() else {
            return Err(Error::NonConvergence { iterations });
        };
        let dir = chol.solve(&grad);
        let decrement = grad.dot(&dir);
        if decrement < 1e-26 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &y + &dir * t;
            let cand_g: Vec<f64> = (0..n).map(|k| (0..d).map(|i| cand[i] * c[i][k]).sum()).collect();
            if cand_g.iter().all(|&g| 1.0 + g >= UBM_DOMAIN_MARGIN) {
                let v = rate_from_g(&cs, &cand_g);
                if v >= val + 1e-4 * t * decrement {
                    accepted = Some((cand, cand_g, v));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, cand_g, v)) = accepted else { break };
        y = cand;
        gv = cand_g;
        val = v;
        iterations += 1;
    }

    let g = params_to_taps(&y, nu);
    let stationarity = ChannelSpectra::mean(&gv.iter().zip(&cs.m).map(|(g, m)| m * (1.0 + g)).collect::<Vec<_>>());
    if (stationarity + 1.0).abs() > STATIONARITY_TOL {
        return Err(Error::NonConvergence { iterations });
    }
    let vv: Vec<C64> = (0..n).map(|i| cs.h[i].conj() * ((1.0 + gv[i]) / (cs.n0 + cs.h2[i]))).collect();
    let v = idtft(&Spectrum::new(opts.grid, vv)?, centered_range(opts.prefilter_len))?;
    Ok(UbmFilters { v, g, milb: val, stationarity, iterations })
}
