use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{
    check_nu, check_sigma, fir_w, gradient_cs, theorem_rate_cs, ChannelSpectra, DesignOptions, FomFilters,
    TRUNCATION_LIMIT,
};
use crate::channel::{min_phase_response, split_target, Cir};
use crate::error::Result;
use crate::spectral::{TapVector, C64};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Real parametrization `(Re f, Im f)` of the complex target taps.
fn to_real(f: &[C64]) -> DVector<f64> {
    let n = f.len();
    DVector::from_fn(2 * n, |i, _| if i < n { f[i].re } else { f[i - n].im })
}

fn to_complex(x: &DVector<f64>) -> Vec<C64> {
    let n = x.len() / 2;
    (0..n).map(|i| C64::new(x[i], x[i + n])).collect()
}

struct Objective<'a> {
    cs: &'a ChannelSpectra,
    nu: usize,
    sigma: f64,
}

impl Objective<'_> {
    fn value(&self, x: &DVector<f64>) -> Option<f64> {
        theorem_rate_cs(self.cs, &to_complex(x), self.nu, self.sigma).ok().filter(|v| v.is_finite())
    }

    /// Real gradient: `∂/∂Re f = 2 Re g`, `∂/∂Im f = 2 Im g` with `g = ∂I/∂f*`.
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let g = gradient_cs(self.cs, &to_complex(x), self.nu, self.sigma)?;
        let n = g.len();
        Ok(DVector::from_fn(2 * n, |i, _| if i < n { 2.0 * g[i].re } else { 2.0 * g[i - n].im }))
    }

    /// Central differences of the analytic gradient, symmetrized.
    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = x.len();
        let mut h = DMatrix::zeros(d, d);
        for j in 0..d {
            let step = 1e-5 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            let col = (self.gradient(&xp)? - self.gradient(&xm)?) / (2.0 * step);
            h.set_column(j, &col);
        }
        Ok((&h + h.transpose()) * 0.5)
    }
}

/// Ascent direction from the shifted Newton system `(−H + μI) d = ∇`, with
/// `μ` just large enough to make the system positive definite.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let neg = -hess;
    let eig = SymmetricEigen::new(neg.clone());
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let floor = 1e-8 * scale;
    let shift = if lmin < floor { floor - lmin } else { 0.0 };
    let shifted = neg + DMatrix::identity(grad.len(), grad.len()) * shift;
    shifted.cholesky().map(|c| c.solve(grad)).unwrap_or_else(|| grad.clone())
}

/// Target response maximizing the theorem rate, started from the HOM
/// target and refined by a damped Newton ascent with backtracking.
///
/// Accepted iterates never decrease the rate. The loop stops once the
/// relative improvement drops below `opts.rel_tol`; reaching
/// `opts.max_iters` returns the best iterate with `converged = false`.
pub fn optimize_fom(cir: &Cir, nu: usize, sigma: f64, opts: &DesignOptions) -> Result<FomFilters> {
    check_nu(cir, nu)?;
    check_sigma(sigma)?;
    let cs = ChannelSpectra::new(cir, opts.grid);
    let (h_f, _) = split_target(&min_phase_response(cir, opts.min_phase.fft_size)?, nu)?;
    optimize_from(&cs, nu, sigma, h_f.taps(), opts)
}

pub(crate) fn optimize_from(
    cs: &ChannelSpectra,
    nu: usize,
    sigma: f64,
    init: &[C64],
    opts: &DesignOptions,
) -> Result<FomFilters> {
    let obj = Objective { cs, nu, sigma };
    let mut x = to_real(init);
    let mut val = theorem_rate_cs(cs, init, nu, sigma)?;
    let mut history = vec![val];
    let mut converged = false;

    for _ in 0..opts.max_iters {
        let grad = obj.gradient(&x)?;
        if grad.norm() == 0.0 {
            converged = true;
            break;
        }
        let dir = newton_direction(&obj.hessian(&x)?, &grad);
        let slope = grad.dot(&dir);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &x + &dir * t;
            if let Some(v) = obj.value(&cand) {
                if v >= val + ARMIJO * t * slope {
                    accepted = Some((cand, v));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, v)) = accepted else {
            // no ascent left at working precision
            converged = true;
            break;
        };
        let rel = (v - val) / val.abs().max(1e-12);
        x = cand;
        val = v;
        history.push(val);
        if rel < opts.rel_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("FOM ascent stopped after {} iterations without meeting the tolerance", opts.max_iters);
    }

    let f_taps = to_complex(&x);
    let f = TapVector::causal(f_taps.clone())?;
    let u = super::epsilon_terms(cs, &f_taps, nu, sigma).solve()?;
    let b = super::feedback_from_solution(&u, nu);
    let fv = cs.eval(&f_taps, 0);
    let bv = b.as_ref().map_or_else(|| vec![C64::new(0.0, 0.0); cs.n()], |b| cs.eval_taps(b));
    let (w, truncation_loss) = fir_w(cs, &fv, &bv, sigma, opts.prefilter_len)?;
    if truncation_loss > TRUNCATION_LIMIT {
        warn!("the FIR prefilter falls short of the ideal rate by {truncation_loss:.2e}");
    }
    Ok(FomFilters { w, f, b, sigma, milb: val, history, converged, truncation_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{standard_channel, StandardChannel};
    use crate::design::theorem1_rate;
    use crate::rates::capacity;

    #[test]
    fn ascent_is_monotone_and_fast() {
        let opts = DesignOptions::default();
        for ch in [StandardChannel::Epr4, StandardChannel::ProakisC] {
            for sigma in [0.5, 1.0] {
                let cir = standard_channel(ch, 10f64.powf(-1.2)).unwrap();
                let r = optimize_fom(&cir, 1, sigma, &opts).unwrap();
                assert!(r.converged);
                assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
                assert!(r.iterations() <= 10, "{ch} σ = {sigma}: {} iterations", r.iterations());
                let direct = theorem1_rate(&r.f, &cir, sigma, opts.grid).unwrap();
                assert!((direct - r.milb).abs() < 1e-12);
                assert_eq!(r.b.as_ref().unwrap().first_delay(), 2);
            }
        }
    }

    #[test]
    fn full_memory_stays_below_capacity() {
        let opts = DesignOptions::default();
        let cir = standard_channel(StandardChannel::ProakisC, 0.1).unwrap();
        let r = optimize_fom(&cir, 4, 0.0, &opts).unwrap();
        assert!(r.b.is_none());
        assert!(r.milb <= capacity(&cir, opts.grid) + 1e-9);
        assert!(r.milb >= r.history[0]);
    }

    #[test]
    fn zero_sigma_gives_zero_feedback() {
        let cir = standard_channel(StandardChannel::Epr4, 0.1).unwrap();
        let r = optimize_fom(&cir, 1, 0.0, &DesignOptions::default()).unwrap();
        assert_eq!(r.b.unwrap().energy(), 0.0);
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let cir = standard_channel(StandardChannel::Epr4, 0.1).unwrap();
        let opts = DesignOptions::default();
        let r = optimize_fom(&cir, 1, 0.0, &opts).unwrap();
        let g = crate::design::fom_gradient(&r.f, &cir, 0.0, opts.grid).unwrap();
        assert!(g.iter().all(|v| v.norm() < 1e-8), "{g:?}");
    }

    #[test]
    fn rejects_out_of_range_inputs() {
        let cir = standard_channel(StandardChannel::Epr4, 0.1).unwrap();
        let opts = DesignOptions::default();
        assert!(optimize_fom(&cir, 1, 1.5, &opts).is_err());
        assert!(optimize_fom(&cir, 4, 0.5, &opts).is_err());
    }
}
