//! Helpers shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use amc_core::autodiff::{uniform, Graph, Tensor, Var};
use amc_core::corpus::LabeledCorpus;
use amc_core::modem::{generate_corpus, CorpusSpec, ModulationClass, SynthesisConfig};
use amc_core::seed;
use rand::Rng;

pub const STEP: f64 = 1e-5;

pub fn random(shape: &[usize], salt: u64) -> Tensor {
    uniform(shape, 1.0, &mut seed::rng(salt))
}

/// Random values bounded away from zero, for the ReLU-family kinks.
pub fn nudged(shape: &[usize], salt: u64) -> Tensor {
    let mut t = random(shape, salt);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    }
    t
}

/// Scalarizes `y` against a fixed random projection.
pub fn project(g: &mut Graph, y: Var) -> Var {
    let mut rng = seed::rng(0x9e37);
    let n = g.value(y).len();
    let r = Tensor::new(g.shape(y).to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let r = g.input(r);
    let p = g.mul(y, r).unwrap();
    g.sum(p)
}

/// Relative error with a floor so that two near-zero values compare equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs() + b.abs();
    if denom < 1e-8 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Max relative error between backprop and central differences over every
/// element of every input. `build` must be deterministic.
pub fn gradcheck(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.variable(t.clone())).collect();
        let y = build(&mut g, &vars);
        let loss = project(&mut g, y);
        let value = g.value(loss).data()[0];
        (g, vars, loss, value)
    };
    let (mut g, vars, loss, _) = eval(inputs);
    g.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[k]).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]);
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (eval(&plus).3 - eval(&minus).3) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}

pub fn corpus(classes: &[ModulationClass], snr_db: &[f64], frames_per_cell: usize, seed: u64) -> LabeledCorpus {
    generate_corpus(&CorpusSpec {
        classes: classes.to_vec(),
        snr_grid: snr_db.to_vec(),
        frames_per_cell,
        cfg: SynthesisConfig::default(),
        seed,
    })
    .unwrap()
}
