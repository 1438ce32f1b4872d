//! Training protocol: stratified splits, mini-batch Adam with early
//! stopping on validation loss, and the hyperparameter grid runner.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Gradients, Graph};
use crate::checkpoint::{ModelCheckpoint, TrainMetadata};
use crate::corpus::LabeledCorpus;
use crate::error::{Error, Result};
use crate::features::{frame_to_input, FeatureTensor, WindowPlan};
use crate::network::{ArchitectureConfig, Model};
use crate::seed;

const INIT_TAG: u64 = 0x1417;
const SHUFFLE_TAG: u64 = 0x5f;
const DROPOUT_TAG: u64 = 0xd70;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::Config(format!("split fractions must be non-negative, got {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1, got {parts:?}")));
        }
        if self.train <= 0.0 {
            return Err(Error::Config("train fraction must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Absolute Adam step size (1.5e-4, not 1.5).
    pub learning_rate: f64,
    /// Overrides the architecture's drop factor.
    pub drop_factor: f64,
    /// Overrides the architecture's first head width.
    pub head_l1: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub split: SplitFractions,
    pub seed: u64,
    /// Frames per graph. A batch is processed as several micro-batches whose
    /// gradients are summed, which bounds memory without changing the
    /// gradient of the batch-mean loss.
    pub micro_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1.5e-4,
            drop_factor: 0.6,
            head_l1: 512,
            max_epochs: 10,
            patience: 3,
            split: SplitFractions::default(),
            seed: 0,
            micro_batch: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.batch_size == 0 || self.micro_batch == 0 {
            return Err(Error::Config("batch_size and micro_batch must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::Config(format!("patience must lie in 1..={}, got {}", self.max_epochs, self.patience)));
        }
        Ok(())
    }

    /// The architecture actually trained: `arch` with this config's drop
    /// factor and first head width.
    pub fn apply(&self, arch: &ArchitectureConfig) -> ArchitectureConfig {
        ArchitectureConfig { drop_factor: self.drop_factor, head_l1: self.head_l1, ..arch.clone() }
    }
}

/// Corpus indices of each split, each list in corpus order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: every `(class, snr)` cell is shuffled and cut
/// separately, so each split sees every cell in proportion. Validation and
/// test take `round(f n)` frames per cell, at least one when their fraction
/// is positive; training takes the rest.
pub fn split_corpus(corpus: &LabeledCorpus, fractions: &SplitFractions, split_seed: u64) -> Result<CorpusSplit> {
    fractions.validate()?;
    let mut cells: BTreeMap<(u8, u64), Vec<usize>> = BTreeMap::new();
    for (i, f) in corpus.frames.iter().enumerate() {
        cells.entry((f.label.id(), f.snr_db.to_bits())).or_default().push(i);
    }
    let positive = [fractions.train, fractions.val, fractions.test].iter().filter(|&&f| f > 0.0).count();
    let take = |f: f64, n: usize| -> usize {
        if f > 0.0 {
            ((f * n as f64).round() as usize).max(1)
        } else {
            0
        }
    };
    let mut split = CorpusSplit { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for ((class, snr_bits), mut members) in cells {
        let n = members.len();
        if positive > 1 && n < 3 {
            return Err(Error::Stratification(format!(
                "cell (class {class}, snr {} dB) has {n} frames; need at least 3",
                f64::from_bits(snr_bits)
            )));
        }
        let n_val = take(fractions.val, n);
        let n_test = take(fractions.test, n);
        if n_val + n_test >= n {
            return Err(Error::Stratification(format!(
                "cell (class {class}, snr {} dB) has {n} frames, too few to leave any for training",
                f64::from_bits(snr_bits)
            )));
        }
        members.shuffle(&mut seed::rng(seed::derive(split_seed, &[class as u64, snr_bits])));
        split.val.extend_from_slice(&members[..n_val]);
        split.test.extend_from_slice(&members[n_val..n_val + n_test]);
        split.train.extend_from_slice(&members[n_val + n_test..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// One preprocessed frame.
#[derive(Debug, Clone)]
pub struct Sample {
    pub windows: Vec<FeatureTensor>,
    pub label: usize,
    pub snr_db: f64,
}

/// Runs the preprocessing pipeline over selected frames. The plan must cut
/// windows as long as the model's input side, as many as it has steps.
pub fn prepare(
    corpus: &LabeledCorpus,
    indices: &[usize],
    plan: &WindowPlan,
    arch: &ArchitectureConfig,
) -> Result<Vec<Sample>> {
    check_plan(plan, arch)?;
    indices
        .iter()
        .map(|&i| {
            let f = corpus
                .frames
                .get(i)
                .ok_or_else(|| Error::Data(format!("frame index {i} outside corpus of {}", corpus.len())))?;
            let label = f.label.id() as usize;
            if label >= arch.classes {
                return Err(Error::Data(format!(
                    "frame {i} has class id {label} but the model has {} outputs",
                    arch.classes
                )));
            }
            Ok(Sample { windows: frame_to_input(f, plan, arch.input_side)?, label, snr_db: f.snr_db })
        })
        .collect()
}

pub fn check_plan(plan: &WindowPlan, arch: &ArchitectureConfig) -> Result<()> {
    if plan.window_len != arch.input_side || plan.count != arch.windows {
        return Err(Error::Config(format!(
            "window plan ({} windows of {}) does not match model input ({} windows of side {})",
            plan.count, plan.window_len, arch.windows, arch.input_side
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// One row per epoch actually run. Losses and accuracies are measured in
    /// inference mode after the epoch's last update.
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose weights were returned.
    pub best_epoch: usize,
    /// Loss on the very first mini-batch, before any update.
    pub initial_loss: f64,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// Model-selection loss of the returned checkpoint.
    pub fn best_loss(&self) -> f64 {
        selection_loss(&self.epochs[self.best_epoch - 1])
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut s = String::from("epoch,train_loss,val_loss,train_acc,val_acc\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.train_loss, opt(e.val_loss), e.train_acc, opt(e.val_acc));
        }
        s
    }
}

/// Early stopping watches the validation loss, or the training loss when
/// there is no validation split.
fn selection_loss(e: &EpochStats) -> f64 {
    e.val_loss.unwrap_or(e.train_loss)
}

/// Tracks the best epoch and decides when patience has run out.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, since_best: 0 }
    }

    /// Records an epoch's loss; returns true when it is a new best
    /// (strictly lower than every earlier loss).
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        match self.best {
            Some((_, b)) if loss >= b || loss.is_nan() => {
                self.since_best += 1;
                false
            }
            _ => {
                self.best = Some((epoch, loss));
                self.since_best = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Mean loss and accuracy in inference mode.
pub fn evaluate_samples(model: &Model, samples: &[Sample], chunk: usize) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Usage("cannot evaluate an empty sample set".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut rng = seed::rng(0);
    for part in samples.chunks(chunk.max(1)) {
        let mut g = Graph::new();
        let views: Vec<&[FeatureTensor]> = part.iter().map(|s| s.windows.as_slice()).collect();
        let labels: Vec<usize> = part.iter().map(|s| s.label).collect();
        let out = model.forward(&mut g, &views, false, &mut rng)?;
        let l = g.softmax_cross_entropy(out.logits, &labels)?;
        loss += g.value(l).data()[0] * part.len() as f64;
        for (row, &y) in g.value(out.probabilities).data().chunks(model.config().classes).zip(&labels) {
            if argmax(row) == y {
                correct += 1;
            }
        }
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// A trained model and how it got there.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub checkpoint: ModelCheckpoint,
}

/// Fits a fresh model to preprocessed samples. Returns the weights from the
/// epoch with the lowest selection loss.
pub fn fit(
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    plan: &WindowPlan,
    train: &[Sample],
    val: &[Sample],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let arch = cfg.apply(arch);
    check_plan(plan, &arch)?;
    let start = Instant::now();
    let init_seed = seed::derive(cfg.seed, &[INIT_TAG]);
    let mut model = Model::new(arch.clone(), init_seed)?;
    let mut adam = AdamState::new(model.params(), cfg.learning_rate);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.params().clone();
    let mut epochs = Vec::new();
    let mut initial_loss = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut seed::rng(seed::derive(cfg.seed, &[SHUFFLE_TAG, epoch as u64])));
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(model.params());
            let mut batch_loss = 0.0;
            for (m, micro) in batch.chunks(cfg.micro_batch).enumerate() {
                let mut rng = seed::rng(seed::derive(cfg.seed, &[DROPOUT_TAG, epoch as u64, b as u64, m as u64]));
                let mut g = Graph::new();
                let views: Vec<&[FeatureTensor]> = micro.iter().map(|&i| train[i].windows.as_slice()).collect();
                let labels: Vec<usize> = micro.iter().map(|&i| train[i].label).collect();
                let out = model.forward(&mut g, &views, true, &mut rng)?;
                let loss = g.softmax_cross_entropy(out.logits, &labels)?;
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::Numeric(format!("loss is {value} at epoch {epoch}, batch {}", b + 1)));
                }
                let weight = micro.len() as f64 / batch.len() as f64;
                batch_loss += value * weight;
                g.backward(loss)?;
                let mut part = Gradients::zeros_like(model.params());
                g.accumulate_param_grads(&mut part)?;
                part.scale(weight);
                grads.merge(&part);
            }
            initial_loss.get_or_insert(batch_loss);
            adam.step(model.params_mut(), &grads)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {}: {e}", b + 1)))?;
            log::trace!("epoch {epoch} batch {} loss {batch_loss:.5}", b + 1);
        }

        let (train_loss, train_acc) = evaluate_samples(&model, train, cfg.micro_batch)?;
        let (val_loss, val_acc) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_samples(&model, val, cfg.micro_batch)?;
            (Some(l), Some(a))
        };
        let stats = EpochStats { epoch, train_loss, val_loss, train_acc, val_acc };
        let sel = selection_loss(&stats);
        if !sel.is_finite() {
            return Err(Error::Numeric(format!("selection loss is {sel} after epoch {epoch}")));
        }
        log::info!(
            "epoch {epoch}: train loss {train_loss:.4} acc {train_acc:.3}, val loss {} acc {}",
            val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            val_acc.map_or("-".into(), |v| format!("{v:.3}"))
        );
        epochs.push(stats);
        if stopper.observe(epoch, sel) {
            best_params = model.params().clone();
        }
        if stopper.should_stop() {
            log::info!("no improvement for {} epochs, stopping", cfg.patience);
            break;
        }
    }

    let (best_epoch, best_loss) = stopper.best().expect("at least one epoch ran");
    let report = TrainReport {
        best_epoch,
        initial_loss: initial_loss.expect("at least one batch ran"),
        wall_time_secs: start.elapsed().as_secs_f64(),
        epochs,
    };
    let metadata = TrainMetadata {
        epochs_run: report.epochs.len(),
        best_epoch,
        init_seed,
        train_seed: cfg.seed,
        best_val_loss: Some(best_loss),
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
    };
    let model = Model::from_parameters(arch, best_params)?;
    Ok(TrainOutcome { report, checkpoint: ModelCheckpoint::from_model(&model, *plan, metadata) })
}

/// Splits `corpus`, preprocesses it and fits a model.
pub fn train(
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    plan: &WindowPlan,
    corpus: &LabeledCorpus,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let arch = cfg.apply(arch);
    let split = split_corpus(corpus, &cfg.split, cfg.seed)?;
    let train_set = prepare(corpus, &split.train, plan, &arch)?;
    let val_set = prepare(corpus, &split.val, plan, &arch)?;
    fit(&arch, cfg, plan, &train_set, &val_set)
}

/// Hyperparameter axes. Trials enumerate drop factor (outermost), then
/// first head width, then learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperGrid {
    pub drop_factors: Vec<f64>,
    pub head_l1: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

impl Default for HyperGrid {
    /// The published tuning grid: 3 drop factors x 2 widths x 3 rates.
    fn default() -> Self {
        Self {
            drop_factors: vec![0.4, 0.5, 0.6],
            head_l1: vec![1024, 512],
            learning_rates: vec![1.0e-4, 0.5e-4, 1.5e-4],
        }
    }
}

impl HyperGrid {
    pub fn trials(&self) -> Vec<(f64, usize, f64)> {
        let mut out = Vec::new();
        for &d in &self.drop_factors {
            for &l1 in &self.head_l1 {
                for &lr in &self.learning_rates {
                    out.push((d, l1, lr));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    /// 0-based position in enumeration order.
    pub index: usize,
    pub drop_factor: f64,
    pub head_l1: usize,
    pub learning_rate: f64,
    /// `(best selection loss, epochs run)`, or the error message.
    pub outcome: std::result::Result<(f64, usize), String>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    /// Trials in enumeration order.
    pub trials: Vec<TrialResult>,
    /// Trial indices, best first. Failed trials are excluded.
    pub ranking: Vec<usize>,
    /// The best combination retrained from scratch.
    pub best: Option<TrainOutcome>,
}

impl GridOutcome {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("trial,drop_factor,head_l1,learning_rate,best_val_loss,epochs_run,rank,error\n");
        for t in &self.trials {
            let rank = self.ranking.iter().position(|&i| i == t.index).map_or(String::new(), |r| (r + 1).to_string());
            let (loss, epochs, err) = match &t.outcome {
                Ok((l, e)) => (l.to_string(), e.to_string(), String::new()),
                Err(e) => (String::new(), String::new(), format!("\"{}\"", e.replace('"', "'"))),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                t.index, t.drop_factor, t.head_l1, t.learning_rate, loss, epochs, rank, err
            );
        }
        s
    }
}

/// Orders successful trials by ascending loss; equal losses keep
/// enumeration order.
pub fn rank_trials(trials: &[TrialResult]) -> Vec<usize> {
    let mut ok: Vec<(usize, f64)> =
        trials.iter().filter_map(|t| t.outcome.as_ref().ok().map(|&(l, _)| (t.index, l))).collect();
    ok.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ok.into_iter().map(|(i, _)| i).collect()
}

/// Trains every grid combination on one split with one seed, ranks them by
/// best validation loss and retrains the winner. A failing trial is
/// recorded and the grid carries on. `workers` caps parallel trials.
pub fn grid_search(
    grid: &HyperGrid,
    arch: &ArchitectureConfig,
    base: &TrainConfig,
    plan: &WindowPlan,
    corpus: &LabeledCorpus,
    workers: usize,
) -> Result<GridOutcome> {
    let combos = grid.trials();
    if combos.is_empty() {
        return Err(Error::Config("hyperparameter grid is empty".into()));
    }
    base.validate()?;
    check_plan(plan, arch)?;
    let split = split_corpus(corpus, &base.split, base.seed)?;
    // Preprocessing does not depend on any grid axis.
    let train_set = prepare(corpus, &split.train, plan, arch)?;
    let val_set = prepare(corpus, &split.val, plan, arch)?;
    let cfg_for = |&(d, l1, lr): &(f64, usize, f64)| TrainConfig {
        drop_factor: d,
        head_l1: l1,
        learning_rate: lr,
        ..base.clone()
    };

    let run = |(index, combo): (usize, &(f64, usize, f64))| {
        let outcome = fit(arch, &cfg_for(combo), plan, &train_set, &val_set)
            .map(|o| (o.report.best_loss(), o.report.epochs.len()))
            .map_err(|e| e.to_string());
        if let Err(e) = &outcome {
            log::warn!("trial {index} failed: {e}");
        }
        TrialResult { index, drop_factor: combo.0, head_l1: combo.1, learning_rate: combo.2, outcome }
    };
    let trials: Vec<TrialResult> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| combos.par_iter().enumerate().map(run).collect())
    } else {
        combos.iter().enumerate().map(run).collect()
    };

    let ranking = rank_trials(&trials);
    let best = match ranking.first() {
        Some(&i) => Some(fit(arch, &cfg_for(&combos[i]), plan, &train_set, &val_set)?),
        None => None,
    };
    Ok(GridOutcome { trials, ranking, best })
}
