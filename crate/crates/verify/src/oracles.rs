//! Reference computations that share no code path with the library
//! routines they check.

use chanshort::channel::Cir;
use chanshort::design::theorem1_rate;
use chanshort::error::Result;
use chanshort::modulation::{label_bit, Modulation};
use chanshort::sove::LLR_CLAMP;
use chanshort::{FrequencyGrid, TapVector, C64};
use nalgebra::DMatrix;

/// Central-difference `∂I/∂f_k* = (∂/∂Re + j ∂/∂Im)/2` of the theorem rate.
pub fn fd_gradient(f: &TapVector, cir: &Cir, sigma: f64, grid: FrequencyGrid, step: f64) -> Result<Vec<C64>> {
    let rate_at = |k: usize, d: C64| -> Result<f64> {
        let mut t = f.taps().to_vec();
        t[k] += d;
        theorem1_rate(&TapVector::causal(t)?, cir, sigma, grid)
    };
    (0..f.len())
        .map(|k| {
            let dre = (rate_at(k, C64::new(step, 0.0))? - rate_at(k, C64::new(-step, 0.0))?) / (2.0 * step);
            let dim = (rate_at(k, C64::new(0.0, step))? - rate_at(k, C64::new(0.0, -step))?) / (2.0 * step);
            Ok(C64::new(dre, dim) / 2.0)
        })
        .collect()
}

/// Max-log bit LLRs by enumerating all `|X|^K` sequences through the
/// full response `h`, with the received block holding `K + L − 1` samples.
pub fn exhaustive_llrs(y: &[C64], h: &[C64], modulation: Modulation, k: usize) -> Vec<f64> {
    let points = modulation.points();
    let m = points.len();
    let bits = modulation.bits_per_symbol();
    let mut best = vec![[f64::INFINITY; 2]; k * bits];
    let mut labels = vec![0usize; k];
    let mut x = vec![C64::new(0.0, 0.0); k];
    for idx in 0..m.pow(k as u32) {
        let mut rest = idx;
        for (l, s) in labels.iter_mut().zip(x.iter_mut()) {
            *l = rest % m;
            *s = points[*l];
            rest /= m;
        }
        let mut metric = 0.0;
        for (t, yt) in y.iter().enumerate().take(k + h.len() - 1) {
            let mut r = *yt;
            for (l, hl) in h.iter().enumerate() {
                if t >= l && t - l < k {
                    r -= hl * x[t - l];
                }
            }
            metric += r.norm_sqr();
        }
        for (s, &lab) in labels.iter().enumerate() {
            for n in 0..bits {
                let slot = &mut best[s * bits + n][label_bit(lab, n) as usize];
                if metric < *slot {
                    *slot = metric;
                }
            }
        }
    }
    best.iter().map(|[neg, pos]| (neg - pos).clamp(-LLR_CLAMP, LLR_CLAMP)).collect()
}

/// Roots of `Σ c_ℓ x^ℓ` from the eigenvalues of its companion matrix.
pub fn polynomial_roots(coeffs: &[C64]) -> Vec<C64> {
    let mut c = coeffs.to_vec();
    while c.len() > 1 && c.last().is_some_and(|v| v.norm() == 0.0) {
        c.pop();
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = c[deg];
    let comp = DMatrix::from_fn(deg, deg, |i, j| {
        if i == 0 {
            -c[deg - 1 - j] / lead
        } else if i == j + 1 {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    comp.eigenvalues().expect("complex Schur form is triangular").iter().copied().collect()
}

/// Minimum-phase equivalent of `h` by reflecting the roots of
/// `Σ h_ℓ x^ℓ` that lie inside the unit circle. The magnitude response
/// is unchanged and the result has its energy front-loaded.
pub fn root_flip_min_phase(h: &TapVector) -> Result<TapVector> {
    let taps = h.taps();
    let mut first = 0;
    while first + 1 < taps.len() && taps[first].norm() == 0.0 {
        first += 1;
    }
    let taps = &taps[first..];
    let roots = polynomial_roots(taps);
    let gain = *taps.last().expect("nonempty taps");
    // poly holds Π over processed factors, lowest degree first
    let mut poly = vec![C64::new(1.0, 0.0)];
    for a in roots {
        // |1 − conj(a) x| = |x − a| on the unit circle
        let (c0, c1) = if a.norm() < 1.0 {
            (C64::new(1.0, 0.0), -a.conj())
        } else {
            (-a, C64::new(1.0, 0.0))
        };
        let mut next = vec![C64::new(0.0, 0.0); poly.len() + 1];
        for (i, p) in poly.iter().enumerate() {
            next[i] += p * c0;
            next[i + 1] += p * c1;
        }
        poly = next;
    }
    TapVector::causal(poly.into_iter().map(|p| p * gain).collect())
}
