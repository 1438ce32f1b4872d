mod common;

use amc_core::autodiff::conv_out_dim;
use amc_core::evaluation::{f1_threshold_curve, metrics, pr_curve, roc_auc, Prediction, PredictionSet};
use amc_core::features::{tensorize, WindowPlan};
use amc_core::modem::{synthesize, ModulationClass, SynthesisConfig};
use amc_core::training::{split_corpus, EarlyStopping, SplitFractions};
use num_complex::Complex64;
use proptest::prelude::*;

fn prediction_set() -> impl Strategy<Value = PredictionSet> {
    (2usize..6).prop_flat_map(|k| {
        proptest::collection::vec((0..k, proptest::collection::vec(1u32..20, k)), k..60).prop_map(move |rows| {
            let items = rows
                .into_iter()
                .enumerate()
                .map(|(i, (label, raw))| {
                    let total: u32 = raw.iter().sum();
                    Prediction {
                        // The first k rows cover every class.
                        label: if i < k { i } else { label },
                        probs: raw.iter().map(|&r| r as f64 / total as f64).collect(),
                        snr_db: (i % 3) as f64 * 10.0,
                    }
                })
                .collect();
            PredictionSet::new(k, items).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_out_dim_matches_enumeration(n in 1usize..40, k in 1usize..12, stride in 1usize..5, pad in 0usize..4) {
        let padded = n + 2 * pad;
        let brute = (0..padded).step_by(stride).filter(|&s| s + k <= padded).count();
        let expected = if brute == 0 { None } else { Some(brute) };
        prop_assert_eq!(conv_out_dim(n, k, stride, pad), expected);
    }

    #[test]
    fn frames_are_unit_power(id in 0u8..9, s: u64) {
        let class = ModulationClass::from_id(id).unwrap();
        let f = synthesize(class, &SynthesisConfig::default(), s).unwrap();
        prop_assert!((f.mean_power() - 1.0).abs() < 1e-9);
        prop_assert!(f.samples.iter().all(|x| x.re.is_finite() && x.im.is_finite()));
    }

    #[test]
    fn tensor_channels_reconstruct_the_window(xs in proptest::collection::vec((-4.0f64..4.0, -4.0f64..4.0), 8)) {
        let w: Vec<Complex64> = xs.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
        let t = tensorize(&w, 8, 0).unwrap();
        for r in 0..8 {
            for (c, s) in w.iter().enumerate() {
                let (a, p) = (t.get(0, r, c), t.get(1, r, c));
                prop_assert!((a * p.cos() - s.re).abs() < 1e-12);
                prop_assert!((a * p.sin() - s.im).abs() < 1e-12);
                let iq = if r % 2 == 0 { s.re } else { s.im };
                prop_assert_eq!(t.get(2, r, c), iq);
            }
        }
    }

    #[test]
    fn half_overlap_plans_tile_the_span(len in 2usize..300, count in 1usize..10) {
        let plan = WindowPlan::half_overlap(len, count);
        let offsets: Vec<usize> = plan.offsets().collect();
        prop_assert_eq!(offsets.len(), count);
        prop_assert_eq!(offsets.last().unwrap() + len, plan.span());
        prop_assert!(offsets.windows(2).all(|w| w[1] - w[0] == len / 2));
    }

    #[test]
    fn early_stopping_keeps_the_first_minimum(losses in proptest::collection::vec(0.0f64..5.0, 1..30), patience in 1usize..5) {
        let mut s = EarlyStopping::new(patience);
        let mut seen = Vec::new();
        for (i, &l) in losses.iter().enumerate() {
            s.observe(i + 1, l);
            seen.push(l);
            let (epoch, best) = s.best().unwrap();
            let min = seen.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(best, min);
            prop_assert_eq!(epoch, seen.iter().position(|&v| v == min).unwrap() + 1);
            let stale = seen.len() - epoch;
            prop_assert_eq!(s.should_stop(), stale >= patience);
            if s.should_stop() {
                break;
            }
        }
    }

    #[test]
    fn metric_invariants(set in prediction_set()) {
        let r = metrics(&set).unwrap();
        let present: Vec<f64> = r.summary.per_class.iter().filter(|m| m.is_present()).map(|m| m.f1).collect();
        let lo = present.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = present.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r.summary.macro_f1 >= lo - 1e-12 && r.summary.macro_f1 <= hi + 1e-12);
        prop_assert_eq!(r.confusion.total() as usize, set.len());
        prop_assert_eq!(r.per_snr.iter().map(|row| row.total).sum::<u64>() as usize, set.len());
        for c in 0..set.classes() {
            let (roc, auc) = roc_auc(&set, c).unwrap();
            prop_assert!((0.0..=1.0).contains(&auc));
            prop_assert_eq!((roc[0].x, roc[0].y), (0.0, 0.0));
            let end = roc.last().unwrap();
            prop_assert_eq!((end.x, end.y), (1.0, 1.0));
            prop_assert!(roc.windows(2).all(|w| w[1].x >= w[0].x && w[1].y >= w[0].y));
            let pr = pr_curve(&set, c).unwrap();
            prop_assert_eq!(pr.last().unwrap().x, 1.0);
            prop_assert!(pr.windows(2).all(|w| w[1].x >= w[0].x));
            let f1 = f1_threshold_curve(&set, c).unwrap();
            prop_assert!(f1.windows(2).all(|w| w[1].threshold > w[0].threshold));
            prop_assert!(f1.iter().all(|p| (0.0..=1.0).contains(&p.y)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn splits_partition_every_cell(n_classes in 1usize..5, n_snr in 1usize..3, per_cell in 3usize..9, s: u64) {
        let classes = &ModulationClass::ALL[..n_classes];
        let snrs: Vec<f64> = (0..n_snr).map(|k| 10.0 * k as f64).collect();
        let corpus = common::corpus(classes, &snrs, per_cell, 1);
        let split = split_corpus(&corpus, &SplitFractions::default(), s).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..corpus.len()).collect::<Vec<_>>());
        for part in [&split.train, &split.val, &split.test] {
            let counts = corpus.subset(part).class_counts();
            prop_assert!(counts[..n_classes].iter().all(|&n| n >= n_snr));
        }
        prop_assert_eq!(split_corpus(&corpus, &SplitFractions::default(), s).unwrap(), split);
    }
}
