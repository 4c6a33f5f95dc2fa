//! Reduced-state soft-output Viterbi equalizer.
//!
//! The trellis has `|X|^ν` states. Tail ISI beyond the state memory is
//! cancelled with per-state decisions taken from each survivor path. Every
//! output symbol gets a `D`-step backward recursion, and bit LLRs use the
//! max-log approximation.

use serde::{Deserialize, Serialize};

use crate::design::ShortenerFilters;
use crate::error::{Error, Result};
use crate::modulation::{label_bit, Modulation};
use crate::spectral::{TapVector, C64};

/// Largest trellis the equalizer accepts.
pub const MAX_STATES: usize = 1 << 20;
/// LLR magnitude clamp, natural-log units.
pub const LLR_CLAMP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    ForneyFeedback,
    Ungerboeck,
    HomFeedback,
}

/// How the per-bit minima are grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlrForm {
    /// `α_k + β_k` over states, or the transition form when `ν = 0`.
    #[default]
    Auto,
    /// `α_k + β_k` grouped by the newest state digit. Needs `ν ≥ 1`.
    State,
    /// `α_{k−1} + γ_k + β_k` grouped by the branch symbol.
    Transition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrellisConfig {
    pub nu: usize,
    pub d: usize,
    pub modulation: Modulation,
    pub metric: MetricKind,
    pub llr_form: LlrForm,
}

impl TrellisConfig {
    pub fn new(nu: usize, d: usize, modulation: Modulation, metric: MetricKind) -> Result<Self> {
        if d < nu {
            return Err(Error::InvalidInput(format!("decision delay D = {d} is below ν = {nu}")));
        }
        let states = (modulation.order() as u128).checked_pow(nu as u32).unwrap_or(u128::MAX);
        if states > MAX_STATES as u128 {
            return Err(Error::StateBudget { states: states.min(usize::MAX as u128) as usize, budget: MAX_STATES });
        }
        Ok(Self { nu, d, modulation, metric, llr_form: LlrForm::Auto })
    }

    pub fn with_llr_form(mut self, form: LlrForm) -> Self {
        self.llr_form = form;
        self
    }

    pub fn n_states(&self) -> usize {
        self.modulation.order().pow(self.nu as u32)
    }

    /// Metric implied by a shortener: FOM uses Forney feedback, HOM the same
    /// form with its split response, UBM the Ungerboeck form.
    pub fn metric_for(filters: &ShortenerFilters) -> MetricKind {
        match filters {
            ShortenerFilters::Fom(_) => MetricKind::ForneyFeedback,
            ShortenerFilters::Hom(_) => MetricKind::HomFeedback,
            ShortenerFilters::Ubm(_) => MetricKind::Ungerboeck,
        }
    }
}

/// Per-bit LLRs of one block, `L > 0` favouring bit `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrFrame {
    pub llrs: Vec<f64>,
    pub bits_per_symbol: usize,
}

impl LlrFrame {
    pub fn n_symbols(&self) -> usize {
        self.llrs.len() / self.bits_per_symbol
    }

    /// Sign decisions; a zero LLR decides `+1`.
    pub fn hard_bits(&self) -> Vec<bool> {
        self.llrs.iter().map(|&l| l >= 0.0).collect()
    }
}

/// Hard symbol decisions from per-bit signs.
pub fn hard_decisions(frame: &LlrFrame, modulation: Modulation) -> Vec<C64> {
    frame
        .hard_bits()
        .chunks(modulation.bits_per_symbol())
        .map(|c| modulation.point(modulation.label(c)))
        .collect()
}

/// Forney metric `|ỹ − Σ f_ℓ s_ℓ − Σ b_ℓ x̂_ℓ|²`. `symbols[0]` is the newest
/// hypothesis symbol, `feedback[0]` the newest decided tail symbol.
pub fn branch_metric_forney(y: C64, symbols: &[C64], feedback: &[C64], f: &[C64], b: &[C64]) -> f64 {
    let mut r = y;
    for (fl, s) in f.iter().zip(symbols) {
        r -= fl * s;
    }
    for (bl, s) in b.iter().zip(feedback) {
        r -= bl * s;
    }
    r.norm_sqr()
}

/// Ungerboeck metric `g_0|s_0|² − 2 Re{s_0*(ỹ − Σ_{ℓ≥1} g_ℓ s_ℓ)}`.
pub fn branch_metric_ungerboeck(y: C64, symbols: &[C64], g: &[C64]) -> f64 {
    let s0 = symbols[0];
    let mut r = y;
    for (gl, s) in g.iter().zip(symbols).skip(1) {
        r -= gl * s;
    }
    g[0].re * s0.norm_sqr() - 2.0 * (s0.conj() * r).re
}

/// Detector model: the target and feedback taps, or the correlation taps.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorModel {
    Forney { f: Vec<C64>, b: Vec<C64> },
    Ungerboeck { g: Vec<C64> },
}

impl DetectorModel {
    pub fn forney(f: &TapVector, b: Option<&TapVector>) -> Result<Self> {
        if f.first_delay() != 0 {
            return Err(Error::InvalidInput("target taps start at delay 0".into()));
        }
        let b = match b {
            Some(b) if b.first_delay() != f.len() as isize => {
                return Err(Error::InvalidInput(format!("feedback taps must start at delay {}", f.len())));
            }
            Some(b) => b.taps().to_vec(),
            None => Vec::new(),
        };
        Ok(DetectorModel::Forney { f: f.taps().to_vec(), b })
    }

    pub fn from_filters(filters: &ShortenerFilters, config: &TrellisConfig) -> Result<Self> {
        if filters.nu() != config.nu {
            return Err(Error::MetricMismatch(format!(
                "filters have memory {} but the trellis uses ν = {}",
                filters.nu(),
                config.nu
            )));
        }
        match (filters, config.metric) {
            (ShortenerFilters::Fom(x), MetricKind::ForneyFeedback | MetricKind::HomFeedback) => {
                Self::forney(&x.f, x.b.as_ref())
            }
            (ShortenerFilters::Hom(x), MetricKind::ForneyFeedback | MetricKind::HomFeedback) => {
                Self::forney(&x.h_f, x.h_b.as_ref())
            }
            (ShortenerFilters::Ubm(x), MetricKind::Ungerboeck) => Ok(DetectorModel::Ungerboeck { g: x.g.taps().to_vec() }),
            (f, m) => Err(Error::MetricMismatch(format!("{} filters cannot drive the {m:?} metric", f.kind()))),
        }
    }

    fn memory(&self) -> usize {
        match self {
            DetectorModel::Forney { f, .. } => f.len() - 1,
            DetectorModel::Ungerboeck { g } => g.len() - 1,
        }
    }

    fn feedback_len(&self) -> usize {
        match self {
            DetectorModel::Forney { b, .. } => b.len(),
            DetectorModel::Ungerboeck { .. } => 0,
        }
    }

    fn metric(&self, y: C64, symbols: &[C64], tail: &[C64]) -> f64 {
        match self {
            DetectorModel::Forney { f, b } => branch_metric_forney(y, symbols, tail, f, b),
            DetectorModel::Ungerboeck { g } => branch_metric_ungerboeck(y, symbols, g),
        }
    }
}

/// `ỹ_k = Σ_d w_d y_{k−d}` for `k = 0..len`, zero outside `y`.
pub fn prefilter(y: &[C64], w: &TapVector, len: usize) -> Vec<C64> {
    (0..len as isize)
        .map(|k| {
            w.iter_delays()
                .filter_map(|(d, t)| {
                    let idx = k - d;
                    (idx >= 0 && (idx as usize) < y.len()).then(|| t * y[idx as usize])
                })
                .sum()
        })
        .collect()
}

/// Prefilters `y` and runs the trellis for a block of `k` symbols.
///
/// `y` holds the `K + L − 1` received samples including the guard tail.
pub fn equalize(y: &[C64], filters: &ShortenerFilters, config: &TrellisConfig, k: usize) -> Result<LlrFrame> {
    if config.metric == MetricKind::Ungerboeck && !matches!(filters, ShortenerFilters::Ubm(_)) {
        return Err(Error::MetricMismatch("the Ungerboeck metric needs UBM filters".into()));
    }
    let model = DetectorModel::from_filters(filters, config)?;
    let stages = k + config.nu;
    let y_tilde = prefilter(y, filters.prefilter(), stages);
    equalize_prefiltered(&y_tilde, &model, config, k)
}

/// Trellis detection on already prefiltered samples (at least `K + ν`).
pub fn equalize_prefiltered(y_tilde: &[C64], model: &DetectorModel, config: &TrellisConfig, k: usize) -> Result<LlrFrame> {
    if k < 1 {
        return Err(Error::BlockTooShort("a block needs at least one symbol".into()));
    }
    if model.memory() != config.nu {
        return Err(Error::MetricMismatch(format!(
            "model memory {} differs from ν = {}",
            model.memory(),
            config.nu
        )));
    }
    if y_tilde.len() < k + config.nu {
        return Err(Error::BlockTooShort(format!(
            "need {} prefiltered samples, got {}",
            k + config.nu,
            y_tilde.len()
        )));
    }
    let trellis = Trellis::forward(y_tilde, model, config, k);
    Ok(trellis.llrs(config))
}

struct Trellis {
    k: usize,
    nu: usize,
    m: usize,
    n_states: usize,
    stages: usize,
    bits: usize,
    /// `alpha[s][j]`: best metric into state `j` after stage `s`.
    alpha: Vec<Vec<f64>>,
    /// `gamma[s][i·M + a]`: branch metric at stage `s` from state `i` with label `a`.
    gamma: Vec<Vec<f64>>,
    /// Backward metrics of the fully terminated trellis.
    beta_term: Vec<Vec<f64>>,
}

impl Trellis {
    fn forward(y: &[C64], model: &DetectorModel, config: &TrellisConfig, k: usize) -> Self {
        let nu = config.nu;
        let m = config.modulation.order();
        let n_states = config.n_states();
        let stages = k + nu;
        let t_len = model.feedback_len();
        let points = config.modulation.points();
        let top = if nu == 0 { 1 } else { m.pow(nu as u32 - 1) };
        let zero = C64::new(0.0, 0.0);

        let sym = |label: usize, time: isize| -> C64 {
            if time >= 0 && (time as usize) < k {
                points[label]
            } else {
                zero
            }
        };

        let mut alpha_prev = vec![f64::INFINITY; n_states];
        alpha_prev[0] = 0.0;
        let mut tails_prev = vec![zero; n_states * t_len];
        let mut alpha = Vec::with_capacity(stages);
        let mut gamma = Vec::with_capacity(stages);
        let mut hyp = vec![zero; nu + 1];

        for s in 0..stages {
            let labels = if s < k { m } else { 1 };
            let mut g = vec![f64::INFINITY; n_states * m];
            let mut a_cur = vec![f64::INFINITY; n_states];
            let mut from = vec![usize::MAX; n_states];
            let mut drop_sym = vec![zero; n_states];
            for i in 0..n_states {
                if alpha_prev[i].is_infinite() {
                    continue;
                }
                let tail = &tails_prev[i * t_len..(i + 1) * t_len];
                let mut digits = i;
                for (l, h) in hyp.iter_mut().enumerate().skip(1) {
                    *h = sym(digits % m, s as isize - l as isize);
                    digits /= m;
                }
                for a in 0..labels {
                    hyp[0] = sym(a, s as isize);
                    let metric = model.metric(y[s], &hyp, tail);
                    g[i * m + a] = metric;
                    let j = if nu == 0 { 0 } else { a + m * (i % top) };
                    let cand = alpha_prev[i] + metric;
                    if cand < a_cur[j] {
                        a_cur[j] = cand;
                        from[j] = i;
                        drop_sym[j] = hyp[nu];
                    }
                }
            }
            let mut tails_cur = vec![zero; n_states * t_len];
            if t_len > 0 {
                for j in 0..n_states {
                    if from[j] == usize::MAX {
                        continue;
                    }
                    let i = from[j];
                    let dst = &mut tails_cur[j * t_len..(j + 1) * t_len];
                    dst[0] = drop_sym[j];
                    dst[1..].copy_from_slice(&tails_prev[i * t_len..i * t_len + t_len - 1]);
                }
            }
            alpha.push(a_cur.clone());
            gamma.push(g);
            alpha_prev = a_cur;
            tails_prev = tails_cur;
        }

        let mut t = Self {
            k,
            nu,
            m,
            n_states,
            stages,
            bits: config.modulation.bits_per_symbol(),
            alpha,
            gamma,
            beta_term: Vec::new(),
        };
        t.beta_term = t.backward_all();
        t
    }

    fn next_state(&self, i: usize, a: usize) -> usize {
        if self.nu == 0 {
            0
        } else {
            a + self.m * (i % self.m.pow(self.nu as u32 - 1))
        }
    }

    /// One backward step `β_{s−1}(i) = min_a γ_s(i, a) + β_s(next(i, a))`.
    fn step_back(&self, s: usize, next: &[f64]) -> Vec<f64> {
        let g = &self.gamma[s];
        let mut cur = vec![f64::INFINITY; self.n_states];
        for (i, c) in cur.iter_mut().enumerate() {
            for a in 0..self.m {
                let gm = g[i * self.m + a];
                if gm.is_finite() {
                    let v = gm + next[self.next_state(i, a)];
                    if v < *c {
                        *c = v;
                    }
                }
            }
        }
        cur
    }

    /// `β_start` from a window whose last stage `end` starts at zero.
    fn backward_window(&self, start: usize, end: usize) -> Vec<f64> {
        let mut beta = vec![0.0; self.n_states];
        for s in (start + 1..=end).rev() {
            beta = self.step_back(s, &beta);
        }
        beta
    }

    /// Backward metrics for every stage of the terminated trellis.
    fn backward_all(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.stages];
        out[self.stages - 1] = vec![0.0; self.n_states];
        for s in (1..self.stages).rev() {
            out[s - 1] = self.step_back(s, &out[s]);
        }
        out
    }

    fn llrs(&self, config: &TrellisConfig) -> LlrFrame {
        let form = match config.llr_form {
            LlrForm::Auto if self.nu == 0 => LlrForm::Transition,
            LlrForm::Auto => LlrForm::State,
            f => f,
        };
        let mut llrs = Vec::with_capacity(self.k * self.bits);
        for k in 0..self.k {
            let window;
            let beta_k: &[f64] = if k + config.d >= self.k - 1 {
                &self.beta_term[k]
            } else {
                window = self.backward_window(k, k + config.d);
                &window
            };
            let mut best = vec![[f64::INFINITY; 2]; self.bits];
            let mut push = |label: usize, v: f64| {
                for (n, b) in best.iter_mut().enumerate() {
                    let slot = &mut b[label_bit(label, n) as usize];
                    if v < *slot {
                        *slot = v;
                    }
                }
            };
            match form {
                LlrForm::State if self.nu >= 1 => {
                    for j in 0..self.n_states {
                        let v = self.alpha[k][j] + beta_k[j];
                        if v.is_finite() {
                            push(j % self.m, v);
                        }
                    }
                }
                _ => {
                    let prev_alpha = |i: usize| if k == 0 { if i == 0 { 0.0 } else { f64::INFINITY } } else { self.alpha[k - 1][i] };
                    for i in 0..self.n_states {
                        let ai = prev_alpha(i);
                        if ai.is_infinite() {
                            continue;
                        }
                        for a in 0..self.m {
                            let v = ai + self.gamma[k][i * self.m + a] + beta_k[self.next_state(i, a)];
                            if v.is_finite() {
                                push(a, v);
                            }
                        }
                    }
                }
            }
            llrs.extend(best.iter().map(|[neg, pos]| (neg - pos).clamp(-LLR_CLAMP, LLR_CLAMP)));
        }
        LlrFrame { llrs, bits_per_symbol: self.bits }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn forney_metric_cases() {
        let f = [c(1.0), c(0.5)];
        let b = [c(0.2)];
        let zero = [c(0.0), c(0.0)];
        let y = C64::new(0.3, -0.4);
        assert!((branch_metric_forney(y, &zero, &[c(0.0)], &f, &b) - 0.25).abs() < 1e-15);
        let s = [c(1.0), c(-1.0)];
        let fb = [c(1.0)];
        let y = c(1.0 - 0.5 + 0.2);
        assert!(branch_metric_forney(y, &s, &fb, &f, &b) < 1e-30);
        assert!(branch_metric_forney(y, &s, &[], &f, &[]) > 0.0);
    }

    #[test]
    fn ungerboeck_metric_cases() {
        assert_eq!(branch_metric_ungerboeck(c(3.0), &[c(0.0), c(1.0)], &[c(2.0), c(0.4)]), 0.0);
        assert_eq!(branch_metric_ungerboeck(c(1.0), &[c(1.0)], &[c(1.0)]), -1.0);
        let g = [c(1.5), C64::new(0.2, 0.1)];
        let s = [C64::new(0.6, 0.8), c(-1.0)];
        let y = C64::new(0.3, 0.7);
        let a = branch_metric_ungerboeck(y, &s, &g);
        let b = branch_metric_ungerboeck(-y, &s, &g);
        let quad = g[0].re * s[0].norm_sqr();
        assert!(((a - quad) + (b - quad) - 2.0 * (-2.0 * (s[0].conj() * (-g[1] * s[1])).re)).abs() < 1e-12);
    }

    #[test]
    fn hard_decision_conventions() {
        let frame = LlrFrame { llrs: vec![3.0, 0.0, -2.0], bits_per_symbol: 1 };
        assert_eq!(hard_decisions(&frame, Modulation::Bpsk), vec![c(1.0), c(1.0), c(-1.0)]);
        let frame = LlrFrame { llrs: vec![1.0; 8], bits_per_symbol: 4 };
        assert!(frame.hard_bits().iter().all(|&b| b));
    }

    #[test]
    fn config_validation() {
        assert!(TrellisConfig::new(2, 1, Modulation::Bpsk, MetricKind::ForneyFeedback).is_err());
        assert!(matches!(
            TrellisConfig::new(6, 6, Modulation::Qam16, MetricKind::ForneyFeedback),
            Err(Error::StateBudget { .. })
        ));
        let cfg = TrellisConfig::new(5, 5, Modulation::Qam16, MetricKind::ForneyFeedback).unwrap();
        assert_eq!(cfg.n_states(), 1 << 20);
    }

    #[test]
    fn noiseless_full_memory_detection() {
        let f = TapVector::from_real(&[1.0, 0.6, -0.3]).unwrap();
        let model = DetectorModel::forney(&f, None).unwrap();
        let bits = [true, false, false, true, true, true, false, true, false, false];
        let x: Vec<C64> = bits.iter().map(|&b| c(if b { 1.0 } else { -1.0 })).collect();
        let k = x.len();
        let y: Vec<C64> = (0..k + 2)
            .map(|n| (0..3).filter(|&l| n >= l && n - l < k).map(|l| f.taps()[l] * x[n - l]).sum())
            .collect();
        for d in [2, 4, 20] {
            let cfg = TrellisConfig::new(2, d, Modulation::Bpsk, MetricKind::ForneyFeedback).unwrap();
            let frame = equalize_prefiltered(&y, &model, &cfg, k).unwrap();
            assert_eq!(frame.hard_bits(), bits);
            assert!(frame.llrs.iter().all(|l| l.abs() > 1.0));
        }
    }

    #[test]
    fn state_and_transition_forms_agree() {
        let f = TapVector::from_real(&[1.0, 0.4]).unwrap();
        let b = TapVector::starting_at(vec![c(0.3), c(-0.2)], 2).unwrap();
        let model = DetectorModel::forney(&f, Some(&b)).unwrap();
        let y: Vec<C64> = (0..40).map(|n| C64::new((n as f64 * 0.7).sin(), (n as f64 * 1.3).cos() * 0.5)).collect();
        for modulation in [Modulation::Bpsk, Modulation::Qpsk] {
            for d in [1, 3] {
                let cfg = TrellisConfig::new(1, d, modulation, MetricKind::ForneyFeedback).unwrap();
                let a = equalize_prefiltered(&y, &model, &cfg.with_llr_form(LlrForm::State), 30).unwrap();
                let t = equalize_prefiltered(&y, &model, &cfg.with_llr_form(LlrForm::Transition), 30).unwrap();
                for (x, z) in a.llrs.iter().zip(&t.llrs) {
                    assert!((x - z).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_short_blocks_and_mismatches() {
        let f = TapVector::from_real(&[1.0, 0.4]).unwrap();
        let model = DetectorModel::forney(&f, None).unwrap();
        let cfg = TrellisConfig::new(1, 1, Modulation::Bpsk, MetricKind::ForneyFeedback).unwrap();
        assert!(matches!(equalize_prefiltered(&[], &model, &cfg, 0), Err(Error::BlockTooShort(_))));
        let cfg0 = TrellisConfig::new(0, 0, Modulation::Bpsk, MetricKind::ForneyFeedback).unwrap();
        assert!(matches!(equalize_prefiltered(&[c(1.0); 4], &model, &cfg0, 3), Err(Error::MetricMismatch(_))));
        let bad = TapVector::starting_at(vec![c(0.3)], 3).unwrap();
        assert!(DetectorModel::forney(&f, Some(&bad)).is_err());
    }
}
