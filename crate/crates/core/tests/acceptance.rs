//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed. Pass a substring to run a subset,
//! e.g. `cargo test --test acceptance -- overfit`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use amc_core::autodiff::{lstm_cell, Graph, LrnParams, LstmCellParams, Tensor, Var};
use amc_core::evaluation::{evaluate, metrics, prf1, roc_auc, ConfusionMatrix, Prediction, PredictionSet};
use amc_core::features::{amplitude, frame_to_input, phase, segment, tensorize, WindowPlan};
use amc_core::modem::{apply_awgn, synthesize, ModulationClass, PulseShape, SynthesisConfig, FRAME_LEN};
use amc_core::network::{ArchitectureConfig, Model, TemporalMode};
use amc_core::seed;
use amc_core::training::{
    evaluate_samples, fit, grid_search, prepare, split_corpus, train, HyperGrid, Sample, SplitFractions, TrainConfig,
};
use common::{gradcheck, nudged, random};
use num_complex::Complex64;
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

struct Criterion {
    id: &'static str,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria = [
        Criterion { id: "1", name: "gradient suite", budget: Duration::from_secs(120), run: gradients },
        Criterion { id: "2", name: "full geometry", budget: Duration::from_secs(300), run: geometry },
        Criterion { id: "3", name: "dsp suite", budget: Duration::from_secs(60), run: dsp },
        Criterion { id: "4", name: "preprocessing oracle", budget: Duration::MAX, run: preprocessing },
        Criterion { id: "5", name: "metric oracles", budget: Duration::MAX, run: metric_oracles },
        Criterion { id: "6", name: "overfit", budget: Duration::from_secs(1800), run: overfit },
        Criterion { id: "7", name: "separability", budget: Duration::MAX, run: separability },
        Criterion { id: "8", name: "protocol fidelity", budget: Duration::MAX, run: protocol },
    ];
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str()) || c.id == f) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over the {:?} budget", c.budget)),
            other => other,
        };
        match result {
            Ok(detail) => println!("criterion {} PASS {} ({:.1}s): {detail}", c.id, c.name, elapsed.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {} ({:.1}s): {detail}", c.id, c.name, elapsed.as_secs_f64());
            }
        }
    }
    if filter.is_empty() {
        println!(
            "criterion 9 NOT REPRODUCIBLE at desk scale: reference targets only, accuracy 93.48%, \
             macro F1 93.45%, AUC 0.9848 / 0.9855 on RadioML2018-scale data"
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// 1. Gradient suite.

fn gradients() -> Outcome {
    let mut report = Vec::new();
    let mut check = |name: &str, err: f64, tol: f64| -> Result<(), String> {
        report.push(format!("{name} {err:.1e}"));
        ensure!(err < tol, "{name}: relative error {err:.3e} >= {tol:e}");
        Ok(())
    };

    for (stride, pad) in [(1, 0), (2, 1)] {
        let e = gradcheck(&[random(&[2, 3, 6, 6], 1), random(&[4, 3, 3, 3], 2), random(&[4], 3)], |g, v| {
            g.conv2d(v[0], v[1], v[2], stride, pad).unwrap()
        });
        check(&format!("conv2d/s{stride}p{pad}"), e, 1e-5)?;
    }
    let e = gradcheck(&[nudged(&[3, 7], 4)], |g, v| g.relu(v[0]));
    check("relu", e, 1e-5)?;
    let e = gradcheck(&[nudged(&[3, 7], 5)], |g, v| g.leaky_relu(v[0], 0.01));
    check("leaky_relu", e, 1e-5)?;
    for (label, p) in
        [("lrn/default", LrnParams::default()), ("lrn/strong", LrnParams { k: 1.0, n: 3, alpha: 0.5, beta: 0.75 })]
    {
        let e = gradcheck(&[random(&[2, 6, 3, 3], 6)], |g, v| g.lrn(v[0], p).unwrap());
        check(label, e, 1e-5)?;
    }
    let e = gradcheck(&[random(&[2, 3, 7, 7], 7)], |g, v| g.max_pool(v[0], 3, 2).unwrap());
    check("max_pool", e, 1e-5)?;
    let e = gradcheck(&[random(&[2, 3, 4, 4], 8)], |g, v| g.global_avg_pool(v[0]).unwrap());
    check("global_avg_pool", e, 1e-5)?;
    let e = gradcheck(&[random(&[3, 5], 9), random(&[4, 5], 10), random(&[4], 11)], |g, v| {
        g.dense(v[0], v[1], Some(v[2])).unwrap()
    });
    check("dense", e, 1e-5)?;
    let e = gradcheck(&[random(&[4, 6], 12)], |g, v| g.softmax_cross_entropy(v[0], &[0, 3, 5, 3]).unwrap());
    check("softmax_cross_entropy", e, 1e-5)?;

    // 8-step LSTM unroll, gradients to the sequence and all eight tensors.
    let (b, t, d, h) = (2, 8, 3, 4);
    let mut inputs = vec![random(&[b, t, d], 13)];
    inputs.extend((0..4).map(|k| random(&[h, h + d], 14 + k)));
    inputs.extend((0..4).map(|k| random(&[h], 18 + k)));
    let e = gradcheck(&inputs, |g, v| {
        let p = LstmCellParams {
            w_forget: v[1],
            w_input: v[2],
            w_cell: v[3],
            w_output: v[4],
            b_forget: v[5],
            b_input: v[6],
            b_cell: v[7],
            b_output: v[8],
        };
        let mut hs = g.input(Tensor::zeros([b, h]));
        let mut cs = g.input(Tensor::zeros([b, h]));
        let mut states = Vec::new();
        for step in 0..t {
            let x = g.select_step(v[0], step).unwrap();
            (hs, cs) = lstm_cell(g, x, hs, cs, &p).unwrap();
            states.push(hs);
        }
        g.concat(&states).unwrap()
    });
    check("lstm_cell x8", e, 1e-4)?;

    let e = gradcheck(&[random(&[2, 5, 4], 22), random(&[4, 4], 23), random(&[4], 24), random(&[1, 4], 25)], |g, v| {
        attention(g, v[0], v[1], v[2], v[3])
    });
    check("attention scorer", e, 1e-5)?;

    // Dropout with a fixed mask is linear; its gradient is the mask.
    let e = gradcheck(&[random(&[4, 9], 26)], |g, v| g.dropout(v[0], 0.5, true, &mut seed::rng(27)).unwrap());
    check("dropout/fixed mask", e, 1e-5)?;

    // Dropout in expectation: mean output and mean gradient of an all-ones
    // vector over 10^5 draws.
    let n = 100_000;
    let mut g = Graph::new();
    let x = g.variable(Tensor::filled([n], 1.0));
    let y = g.dropout(x, 0.5, true, &mut seed::rng(28)).map_err(|e| e.to_string())?;
    let mean_out = g.value(y).data().iter().sum::<f64>() / n as f64;
    let loss = g.sum(y);
    g.backward(loss).map_err(|e| e.to_string())?;
    let mean_grad = g.grad(x).unwrap().iter().sum::<f64>() / n as f64;
    report.push(format!("dropout E[y] {mean_out:.4} E[dy/dx] {mean_grad:.4}"));
    ensure!((mean_out - 1.0).abs() <= 0.02, "dropout mean {mean_out} not within 0.02 of 1");
    ensure!((mean_grad - 1.0).abs() <= 0.02, "dropout mean gradient {mean_grad} not within 0.02 of 1");
    Ok(report.join(", "))
}

/// Additive attention over `seq (B, T, H)`, returning the context vector.
fn attention(g: &mut Graph, seq: Var, w: Var, b: Var, score: Var) -> Var {
    let s = g.shape(seq).to_vec();
    let u = g.dense(seq, w, Some(b)).unwrap();
    let u = g.tanh(u);
    let e = g.dense(u, score, None).unwrap();
    let e = g.reshape(e, &[s[0], s[1]]).unwrap();
    let a = g.softmax(e);
    g.weighted_sum(a, seq).unwrap()
}

// 2. Full geometry.

fn geometry() -> Outcome {
    let arch = ArchitectureConfig::default();
    let trace = arch.shape_trace().map_err(|e| e.to_string())?;
    let last = trace.last().unwrap().1;
    ensure!(last == [256, 13, 13], "conv trace ends at {last:?}");

    let frame = synthesize(ModulationClass::Qpsk, &SynthesisConfig::default(), 3).unwrap();
    let windows = frame_to_input(&frame, &arch.window_plan(), arch.input_side).unwrap();
    ensure!(windows.len() == 8, "{} windows", windows.len());

    let mut widths = Vec::new();
    for mode in [TemporalMode::Flatten, TemporalMode::Attention] {
        let model = Model::new(ArchitectureConfig { temporal_mode: mode, ..arch.clone() }, 5).unwrap();
        let mut g = Graph::new();
        let images = g.input(model.batch_input(&[&windows]).unwrap());
        let feats = model.cnn_forward(&mut g, images).unwrap();
        ensure!(g.shape(feats) == [8, 256], "GAP output {:?}", g.shape(feats));
        let out = model.forward(&mut g, &[&windows], false, &mut seed::rng(0)).unwrap();
        let pre = g.shape(out.pre_head).to_vec();
        let probs = g.value(out.probabilities).data().to_vec();
        ensure!(probs.len() == 9, "{} probabilities", probs.len());
        let total: f64 = probs.iter().sum();
        ensure!((total - 1.0).abs() < 1e-12, "probabilities sum to {total}");
        widths.push(pre[1]);
    }
    ensure!(widths == [2048, 256], "pre-head widths (flatten, attention) = {widths:?}");
    Ok("trace ends 256x13x13, GAP 256, flatten 2048, attention 256, 9 probabilities sum to 1".into())
}

// 3. DSP suite.

fn dsp() -> Outcome {
    let cfg = SynthesisConfig::default();
    let mut worst_power = 0.0f64;
    let mut worst_env = 0.0f64;
    for class in ModulationClass::ALL {
        for s in 0..5 {
            let f = synthesize(class, &cfg, 100 + s).unwrap();
            worst_power = worst_power.max((f.mean_power() - 1.0).abs());
            if matches!(class, ModulationClass::Fm | ModulationClass::Gmsk) {
                for x in &f.samples {
                    worst_env = worst_env.max((x.norm() - 1.0).abs());
                }
            }
        }
    }
    ensure!(worst_power <= 1e-9, "mean power off by {worst_power:e}");
    ensure!(worst_env <= 1e-9, "FM/GMSK envelope off by {worst_env:e}");

    let rect = SynthesisConfig { pulse: PulseShape::Rectangular, samples_per_symbol: 2, ..cfg.clone() };
    let mut counts = Vec::new();
    for class in ModulationClass::ALL {
        let Some(order) = class.constellation_order() else { continue };
        let mut union = BTreeSet::new();
        for s in 0..4 {
            let f = synthesize(class, &rect, 200 + s).unwrap();
            let peak = f.samples.iter().map(|x| x.norm()).fold(0.0, f64::max);
            let mut frame_points = BTreeSet::new();
            for x in f.samples.iter().step_by(2) {
                let q = ((x.re / peak * 1e6).round() as i64, (x.im / peak * 1e6).round() as i64);
                frame_points.insert(q);
            }
            ensure!(frame_points.len() <= order, "{class} frame has {} points", frame_points.len());
            union.extend(frame_points);
        }
        ensure!(union.len() == order, "{class}: {} distinct points, expected {order}", union.len());
        counts.push(union.len());
    }
    ensure!(counts == [2, 4, 8, 16, 64], "cardinalities {counts:?}");

    let mut measured = Vec::new();
    for snr in [0.0, 10.0, 20.0] {
        let (mut sig, mut noise, mut n) = (0.0, 0.0, 0usize);
        let mut k = 0;
        while n < 1_000_000 {
            let clean = synthesize(ModulationClass::ALL[k % 9], &cfg, 300 + k as u64).unwrap();
            let noisy = apply_awgn(&clean, snr, 10_000 + k as u64).unwrap();
            for (c, y) in clean.samples.iter().zip(&noisy.samples) {
                sig += c.norm_sqr();
                noise += (y - c).norm_sqr();
            }
            n += FRAME_LEN;
            k += 1;
        }
        let est = 10.0 * (sig / noise).log10();
        ensure!((est - snr).abs() <= 0.2, "target {snr} dB measured {est:.3} dB");
        measured.push(format!("{snr}->{est:.4}"));
    }
    Ok(format!(
        "power err {worst_power:.1e}, envelope err {worst_env:.1e}, cardinalities {counts:?}, SNR dB {}",
        measured.join(" ")
    ))
}

// 4. Preprocessing oracle.

fn preprocessing() -> Outcome {
    let w = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(-1.0, 0.0), Complex64::new(0.0, -1.0)];
    let t = tensorize(&w, 4, 0).unwrap();
    let phase_row = [0.0, FRAC_PI_2, PI, -FRAC_PI_2];
    for r in 0..4 {
        ensure!(t.row(0, r) == [1.0; 4], "channel 0 row {r} = {:?}", t.row(0, r));
        ensure!(t.row(1, r) == phase_row, "channel 1 row {r} = {:?}", t.row(1, r));
        let want: [f64; 4] = if r % 2 == 0 { [1.0, 0.0, -1.0, 0.0] } else { [0.0, 1.0, 0.0, -1.0] };
        ensure!(t.row(2, r) == want, "channel 2 row {r} = {:?}", t.row(2, r));
    }

    let plan = WindowPlan::default();
    let frame = synthesize(ModulationClass::Qam16, &SynthesisConfig::default(), 9).unwrap();
    let windows = segment(&frame, &plan).unwrap();
    let offsets: Vec<usize> = windows
        .iter()
        .map(|w| (w.as_ptr() as usize - frame.samples.as_ptr() as usize) / std::mem::size_of::<Complex64>())
        .collect();
    let want: Vec<usize> = (0..8).map(|k| 112 * k).collect();
    ensure!(offsets == want, "window offsets {offsets:?}");
    ensure!(windows.iter().all(|w| w.len() == 224), "window lengths");

    let mut rng = seed::rng(41);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x: Vec<Complex64> =
            (0..256).map(|_| Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).collect();
        for ((s, a), p) in x.iter().zip(amplitude(&x)).zip(phase(&x)) {
            worst = worst.max((a - (s.re * s.re + s.im * s.im).sqrt()).abs());
            worst = worst.max((a * p.cos() - s.re).abs()).max((a * p.sin() - s.im).abs());
            ensure!((-PI..=PI).contains(&p), "phase {p} outside [-pi, pi]");
        }
    }
    ensure!(worst <= 1e-12, "amplitude/phase identity error {worst:e}");
    Ok(format!("S=4 tensor exact, offsets 0..784 step 112, identity error {worst:.1e}"))
}

// 5. Metric oracles.

fn metric_oracles() -> Outcome {
    let mut rng = seed::rng(51);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let classes = rng.random_range(2..6);
        let n = rng.random_range(10..200);
        // Coarse scores so that ties occur.
        let levels = if trial % 2 == 0 { 7.0 } else { 1e6 };
        let items: Vec<Prediction> = (0..n)
            .map(|i| {
                let raw: Vec<f64> = (0..classes).map(|_| (rng.random::<f64>() * levels).floor() + 1.0).collect();
                let total: f64 = raw.iter().sum();
                Prediction {
                    label: if i < classes { i } else { rng.random_range(0..classes) },
                    probs: raw.iter().map(|r| r / total).collect(),
                    snr_db: 10.0,
                }
            })
            .collect();
        let set = PredictionSet::new(classes, items).unwrap();
        for c in 0..classes {
            let (_, auc) = roc_auc(&set, c).unwrap();
            worst = worst.max((auc - pairwise_auc(&set, c)).abs());
        }
    }
    ensure!(worst <= 1e-9, "AUC differs from the pairwise oracle by {worst:e}");

    let cm = ConfusionMatrix { counts: vec![vec![8, 2], vec![3, 7]] };
    let s = prf1(&cm);
    let c0 = &s.per_class[0];
    ensure!(c0.precision == 8.0 / 11.0, "P = {}", c0.precision);
    ensure!(c0.recall == 0.8, "R = {}", c0.recall);
    ensure!(c0.f1 == 16.0 / 21.0, "F1 = {}", c0.f1);
    ensure!(s.accuracy == 0.75, "accuracy = {}", s.accuracy);

    let items: Vec<Prediction> = (0..27)
        .map(|i| {
            let label = i % 9;
            let mut probs = vec![0.01; 9];
            probs[label] = 0.92;
            Prediction { label, probs, snr_db: 0.0 }
        })
        .collect();
    let r = metrics(&PredictionSet::new(9, items).unwrap()).map_err(|e| e.to_string())?;
    let m = &r.summary;
    ensure!([m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1] == [1.0; 4], "perfect summary {m:?}");
    ensure!(r.curves.len() == 9 && r.curves.iter().all(|c| c.auc == 1.0), "perfect AUCs");
    ensure!(r.per_snr.iter().all(|row| row.accuracy() == 1.0), "perfect per-SNR accuracy");
    Ok(format!("AUC vs pairwise max diff {worst:.1e}, hand case exact, perfect set all 1.0"))
}

/// P(score of a random positive > random negative), ties counting half.
fn pairwise_auc(set: &PredictionSet, class: usize) -> f64 {
    let pos: Vec<f64> = set.items().iter().filter(|p| p.label == class).map(|p| p.probs[class]).collect();
    let neg: Vec<f64> = set.items().iter().filter(|p| p.label != class).map(|p| p.probs[class]).collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

// 6. Overfit.

fn overfit() -> Outcome {
    let classes = [ModulationClass::Bpsk, ModulationClass::Fm, ModulationClass::Qam16];
    let corpus = common::corpus(&classes, &[f64::INFINITY], 40, 61);
    let arch = ArchitectureConfig::reduced();
    let cfg = overfit_config();
    let plan = arch.window_plan();
    let out = train(&arch, &cfg, &plan, &corpus).map_err(|e| e.to_string())?;
    let r = &out.report;
    let ln9 = 9f64.ln();
    ensure!((r.initial_loss - ln9).abs() <= 0.1, "first-batch loss {:.4} vs ln 9 = {ln9:.4}", r.initial_loss);
    let best_acc = r.epochs.iter().map(|e| e.train_acc).fold(0.0, f64::max);
    ensure!(best_acc >= 0.95, "best training accuracy {best_acc:.3} after {} epochs", r.epochs.len());
    let all: Vec<usize> = (0..corpus.len()).collect();
    let eval = evaluate(&out.checkpoint, &plan, &corpus, &all, 1).map_err(|e| e.to_string())?;
    ensure!(eval.summary.accuracy >= 0.95, "checkpoint accuracy on its training set {:.3}", eval.summary.accuracy);
    Ok(format!(
        "first-batch loss {:.4} (ln 9 = {ln9:.4}), best train acc {best_acc:.3}, checkpoint acc {:.3} at epoch {}",
        r.initial_loss, eval.summary.accuracy, r.best_epoch
    ))
}

/// Regularization off and a desk-scale learning rate: the point is to show
/// the network can memorize, not to generalize.
fn overfit_config() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        learning_rate: 1e-3,
        drop_factor: 0.0,
        max_epochs: 50,
        patience: 50,
        split: SplitFractions { train: 1.0, val: 0.0, test: 0.0 },
        seed: 6,
        ..TrainConfig::default()
    }
}

// 7. Separability.

fn separability() -> Outcome {
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        drop_factor: 0.4,
        head_l1: 512,
        max_epochs: 30,
        patience: 5,
        ..TrainConfig::default()
    };
    let mut rows = Vec::new();
    let (mut above_chance, mut flatten_wins) = (0, 0);
    for s in 1..=3u64 {
        let corpus = common::corpus(&ModulationClass::ALL, &[20.0], 40, 700 + s);
        let cfg = TrainConfig { seed: s, ..cfg.clone() };
        let split = split_corpus(&corpus, &cfg.split, cfg.seed).map_err(|e| e.to_string())?;
        let mut scores = Vec::new();
        for mode in [TemporalMode::Flatten, TemporalMode::Attention] {
            let arch = ArchitectureConfig { temporal_mode: mode, ..ArchitectureConfig::reduced() };
            let plan = arch.window_plan();
            let out = train(&arch, &cfg, &plan, &corpus).map_err(|e| e.to_string())?;
            let r = evaluate(&out.checkpoint, &plan, &corpus, &split.test, 1).map_err(|e| e.to_string())?;
            scores.push((r.summary.accuracy, r.summary.macro_f1));
        }
        let (flat, att) = (scores[0], scores[1]);
        above_chance += usize::from(flat.0 > 1.0 / 3.0);
        flatten_wins += usize::from(flat.1 >= att.1);
        rows.push(format!(
            "seed {s}: flatten acc {:.3} F1 {:.3}, attention acc {:.3} F1 {:.3}",
            flat.0, flat.1, att.0, att.1
        ));
    }
    let detail = rows.join("; ");
    ensure!(above_chance >= 2, "flatten accuracy > 1/3 on only {above_chance}/3 seeds ({detail})");
    ensure!(flatten_wins >= 2, "flatten F1 >= attention F1 on only {flatten_wins}/3 seeds ({detail})");
    Ok(format!("{detail}; accuracy > 1/3 on {above_chance}/3, flatten >= attention on {flatten_wins}/3"))
}

// 8. Protocol fidelity.

fn protocol() -> Outcome {
    let arch = ArchitectureConfig::reduced();
    let plan = arch.window_plan();
    let corpus = common::corpus(&ModulationClass::ALL, &[10.0], 3, 81);
    let base = TrainConfig { max_epochs: 1, patience: 1, seed: 8, ..TrainConfig::default() };
    let grid = HyperGrid::default();
    let out = grid_search(&grid, &arch, &base, &plan, &corpus, 1).map_err(|e| e.to_string())?;
    ensure!(out.trials.len() == 18, "{} trials", out.trials.len());
    let combos: BTreeSet<String> =
        out.trials.iter().map(|t| format!("{}/{}/{}", t.drop_factor, t.head_l1, t.learning_rate)).collect();
    ensure!(combos.len() == 18, "{} distinct combinations", combos.len());
    let losses: Vec<f64> = out.ranking.iter().map(|&i| out.trials[i].outcome.as_ref().unwrap().0).collect();
    ensure!(losses.windows(2).all(|w| w[0] <= w[1]), "ranking not ascending: {losses:?}");
    let best = out.best.as_ref().ok_or("no retrained winner")?;
    ensure!(
        best.report.best_loss() == losses[0],
        "retrained winner loss {} vs trial {}",
        best.report.best_loss(),
        losses[0]
    );

    // Training only ever sees class 0 and validation only class 1, so the
    // validation loss worsens after the first epoch.
    let frames = common::corpus(&[ModulationClass::Bpsk, ModulationClass::Qpsk], &[f64::INFINITY], 8, 82);
    let train_idx: Vec<usize> = (0..8).collect();
    let val_idx: Vec<usize> = (8..16).collect();
    let train_set = prepare(&frames, &train_idx, &plan, &arch).map_err(|e| e.to_string())?;
    let val_set: Vec<Sample> = prepare(&frames, &val_idx, &plan, &arch).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 10,
        patience: 1,
        batch_size: 4,
        seed: 9,
        ..TrainConfig::default()
    };
    let out = fit(&arch, &cfg, &plan, &train_set, &val_set).map_err(|e| e.to_string())?;
    let r = &out.report;
    let val: Vec<f64> = r.epochs.iter().filter_map(|e| e.val_loss).collect();
    ensure!(val.len() == 2 && val[1] > val[0], "validation losses {val:?}");
    ensure!(r.best_epoch == 1, "best epoch {}", r.best_epoch);
    let model = out.checkpoint.to_model().map_err(|e| e.to_string())?;
    let (loss, _) = evaluate_samples(&model, &val_set, cfg.micro_batch).map_err(|e| e.to_string())?;
    ensure!(loss == val[0], "checkpoint validation loss {loss} vs epoch-1 {}", val[0]);
    Ok(format!(
        "18 trials ranked, winner loss {:.4}; early stop at epoch 2 returned epoch 1 (val {:.4} -> {:.4})",
        losses[0], val[0], val[1]
    ))
}
