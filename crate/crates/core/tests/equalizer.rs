use chanshort::channel::{standard_channel, Cir, StandardChannel};
use chanshort::design::{design_hom, optimize_fom, DesignOptions, ShortenerFilters};
use chanshort::modulation::{label_bit, Modulation};
use chanshort::sim::transmit;
use chanshort::sove::{equalize, equalize_prefiltered, prefilter, DetectorModel, MetricKind, TrellisConfig, LLR_CLAMP};
use chanshort::{TapVector, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_bits(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    (0..n).map(|_| rng.random()).collect()
}

/// Symbol-by-symbol decision feedback detector with max-log bit LLRs.
fn direct_dfe(y: &[C64], f0: C64, b: &[C64], modulation: Modulation, k: usize) -> Vec<f64> {
    let points = modulation.points();
    let bits = modulation.bits_per_symbol();
    let mut decided: Vec<C64> = Vec::with_capacity(k);
    let mut llrs = Vec::with_capacity(k * bits);
    for (t, &yt) in y.iter().enumerate().take(k) {
        let mut r = yt;
        for (l, bl) in b.iter().enumerate() {
            if t > l {
                r -= bl * decided[t - 1 - l];
            }
        }
        let metrics: Vec<f64> = points.iter().map(|p| (r - f0 * p).norm_sqr()).collect();
        let mut best = 0;
        for (a, &m) in metrics.iter().enumerate() {
            if m < metrics[best] {
                best = a;
            }
        }
        decided.push(points[best]);
        for n in 0..bits {
            let mut pos = f64::INFINITY;
            let mut neg = f64::INFINITY;
            for (a, &m) in metrics.iter().enumerate() {
                let slot = if label_bit(a, n) { &mut pos } else { &mut neg };
                *slot = slot.min(m);
            }
            llrs.push((neg - pos).clamp(-LLR_CLAMP, LLR_CLAMP));
        }
    }
    llrs
}

#[test]
fn zero_memory_trellis_is_a_dfe() {
    let cir = standard_channel(StandardChannel::Epr4, 10f64.powf(-1.2)).unwrap();
    let fom = optimize_fom(&cir, 0, 1.0, &DesignOptions::default()).unwrap();
    let b = fom.b.clone().unwrap();
    assert_eq!(b.first_delay(), 1);
    let model = DetectorModel::forney(&fom.f, Some(&b)).unwrap();
    let k = 200;
    for modulation in [Modulation::Qpsk, Modulation::Qam16] {
        let config = TrellisConfig::new(0, 0, modulation, MetricKind::ForneyFeedback).unwrap();
        for block in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(block);
            let bits = random_bits(&mut rng, k * modulation.bits_per_symbol());
            let (_, y) = transmit(&bits, modulation, &cir, &mut rng).unwrap();
            let yt = prefilter(&y, &fom.w, k);
            let got = equalize_prefiltered(&yt, &model, &config, k).unwrap().llrs;
            let want = direct_dfe(&yt, fom.f.taps()[0], b.taps(), modulation, k);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9, "{modulation} block {block}: {g} vs {w}");
            }
        }
    }
}

#[test]
fn noiseless_hom_detection_is_exact() {
    let cir = standard_channel(StandardChannel::Epr4, 1e-3).unwrap();
    let mut opts = DesignOptions::default().min_phase;
    opts.prefilter_len = 1025;
    let hom = design_hom(&cir, 1, &opts).unwrap();
    let filters = ShortenerFilters::Hom(hom);
    let quiet = Cir::new(cir.h().clone(), 1e-20).unwrap();
    let k = 300;
    for modulation in [Modulation::Bpsk, Modulation::Qpsk] {
        let config = TrellisConfig::new(1, 6, modulation, MetricKind::HomFeedback).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bits = random_bits(&mut rng, k * modulation.bits_per_symbol());
        let (_, y) = transmit(&bits, modulation, &quiet, &mut rng).unwrap();
        let frame = equalize(&y, &filters, &config, k).unwrap();
        assert_eq!(frame.hard_bits(), bits, "{modulation}");
    }
}

/// Max-log LLRs by enumerating every symbol sequence of a short block.
fn exhaustive_llrs(y: &[C64], h: &[C64], modulation: Modulation, k: usize) -> Vec<f64> {
    let points = modulation.points();
    let m = points.len();
    let bits = modulation.bits_per_symbol();
    let mut best = vec![[f64::INFINITY; 2]; k * bits];
    let total = m.pow(k as u32);
    let mut labels = vec![0usize; k];
    for idx in 0..total {
        let mut rest = idx;
        for l in labels.iter_mut() {
            *l = rest % m;
            rest /= m;
        }
        let metric: f64 = (0..k + h.len() - 1)
            .map(|t| {
                let clean: C64 = (0..h.len()).filter(|&l| t >= l && t - l < k).map(|l| h[l] * points[labels[t - l]]).sum();
                (y[t] - clean).norm_sqr()
            })
            .sum();
        for (s, &lab) in labels.iter().enumerate() {
            for n in 0..bits {
                let slot = &mut best[s * bits + n][label_bit(lab, n) as usize];
                *slot = slot.min(metric);
            }
        }
    }
    best.iter().map(|[neg, pos]| (neg - pos).clamp(-LLR_CLAMP, LLR_CLAMP)).collect()
}

#[test]
fn full_memory_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..6 {
        let h: Vec<C64> = (0..2).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let taps = TapVector::causal(h.clone()).unwrap();
        let cir = Cir::new(taps.clone(), 0.3).unwrap();
        let modulation = Modulation::Qpsk;
        let k = 6;
        let bits = random_bits(&mut rng, k * 2);
        let (_, y) = transmit(&bits, modulation, &cir, &mut rng).unwrap();
        let model = DetectorModel::forney(&taps, None).unwrap();
        let config = TrellisConfig::new(1, k, modulation, MetricKind::ForneyFeedback).unwrap();
        let got = equalize_prefiltered(&y, &model, &config, k).unwrap().llrs;
        let want = exhaustive_llrs(&y, &h, modulation, k);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "trial {trial}: {g} vs {w}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bpsk_llrs_flip_with_the_received_signal(
        seed in any::<u64>(),
        d in 1usize..8,
        taps in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        prop_assume!(taps.iter().map(|t| t * t).sum::<f64>() > 0.05);
        let h = TapVector::from_real(&taps).unwrap();
        let cir = Cir::new(h.clone(), 0.2).unwrap();
        let f = TapVector::causal(h.taps()[..2].to_vec()).unwrap();
        let b = TapVector::starting_at(h.taps()[2..].to_vec(), 2).unwrap();
        let model = DetectorModel::forney(&f, Some(&b)).unwrap();
        let config = TrellisConfig::new(1, d, Modulation::Bpsk, MetricKind::ForneyFeedback).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 40;
        let bits = random_bits(&mut rng, k);
        let (_, y) = transmit(&bits, Modulation::Bpsk, &cir, &mut rng).unwrap();
        let neg: Vec<C64> = y.iter().map(|v| -v).collect();
        let a = equalize_prefiltered(&y, &model, &config, k).unwrap().llrs;
        let z = equalize_prefiltered(&neg, &model, &config, k).unwrap().llrs;
        for (p, q) in a.iter().zip(&z) {
            prop_assert!((p + q).abs() < 1e-9, "{} vs {}", p, q);
        }
    }
}
