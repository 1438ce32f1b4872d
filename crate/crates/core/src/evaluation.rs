//! Classification metrics: confusion matrix, macro precision/recall/F1,
//! and one-vs-rest ROC, precision-recall and F1-threshold curves.

use rayon::prelude::*;

use crate::checkpoint::ModelCheckpoint;
use crate::corpus::LabeledCorpus;
use crate::error::{Error, Result};
use crate::features::{FeatureTensor, WindowPlan};
use crate::modem::ModulationClass;
use crate::network::Model;
use crate::training::{argmax, check_plan, prepare, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probs: Vec<f64>,
    pub snr_db: f64,
}

/// Scored samples over a fixed number of classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    classes: usize,
    items: Vec<Prediction>,
}

impl PredictionSet {
    /// Checks that every row has `classes` entries summing to 1 within
    /// 1e-9 and every label is in range.
    pub fn new(classes: usize, items: Vec<Prediction>) -> Result<Self> {
        for (i, p) in items.iter().enumerate() {
            if p.probs.len() != classes {
                return Err(Error::Data(format!("row {i} has {} scores, expected {classes}", p.probs.len())));
            }
            if p.label >= classes {
                return Err(Error::Data(format!("row {i} has label {} outside 0..{classes}", p.label)));
            }
            let sum: f64 = p.probs.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || p.probs.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Data(format!("row {i} is not a probability vector (sum {sum})")));
            }
        }
        Ok(Self { classes, items })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn items(&self) -> &[Prediction] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }
}

/// Argmax decisions (lowest class id wins ties) tallied against labels.
pub fn confusion_matrix(set: &PredictionSet) -> Result<ConfusionMatrix> {
    if set.is_empty() {
        return Err(Error::Usage("confusion matrix of an empty prediction set".into()));
    }
    let mut counts = vec![vec![0u64; set.classes]; set.classes];
    for p in &set.items {
        counts[p.label][argmax(&p.probs)] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of samples whose true label is this class.
    pub support: u64,
    /// True when nothing was predicted as this class, so precision was set
    /// to 0 rather than computed.
    pub precision_undefined: bool,
    /// True when the class has no samples, so recall was set to 0.
    pub recall_undefined: bool,
}

impl ClassMetrics {
    /// A class takes part in macro averages when it occurs as a label or as
    /// a prediction.
    pub fn is_present(&self) -> bool {
        !(self.precision_undefined && self.recall_undefined)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// Per-class precision, recall and F1 plus their unweighted means over the
/// classes present in the matrix.
pub fn prf1(cm: &ConfusionMatrix) -> Summary {
    let ratio = |num: u64, den: u64| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
    let per_class: Vec<ClassMetrics> = (0..cm.classes())
        .map(|c| {
            let tp = cm.counts[c][c];
            let (precision, precision_undefined) = ratio(tp, cm.col_sum(c));
            let (recall, recall_undefined) = ratio(tp, cm.row_sum(c));
            // 2PR/(P+R) in count form: one rounding instead of three.
            let (fp, fneg) = (cm.col_sum(c) - tp, cm.row_sum(c) - tp);
            let f1 = if tp == 0 { 0.0 } else { (2 * tp) as f64 / (2 * tp + fp + fneg) as f64 };
            ClassMetrics { precision, recall, f1, support: cm.row_sum(c), precision_undefined, recall_undefined }
        })
        .collect();
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.is_present()).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64
        }
    };
    let total = cm.total();
    Summary {
        accuracy: if total == 0 { 0.0 } else { cm.trace() as f64 / total as f64 },
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
    }
}

/// One point of a threshold sweep. For ROC, `x` is the false-positive rate
/// and `y` the true-positive rate; for PR, `x` is recall and `y` precision;
/// for the F1 curve, `x` is the threshold and `y` the F1 score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// Confusion counts of the rule "score >= threshold" at one threshold.
#[derive(Debug, Clone, Copy)]
struct Counts {
    threshold: f64,
    tp: u64,
    fp: u64,
}

/// `(score, is_positive)` per prediction.
type Scored = Vec<(f64, bool)>;

/// One-vs-rest scores and positive/negative totals; errors when either
/// side is empty.
fn one_vs_rest(set: &PredictionSet, class: usize) -> Result<(Scored, u64, u64)> {
    if class >= set.classes {
        return Err(Error::Usage(format!("class {class} outside 0..{}", set.classes)));
    }
    let scored: Vec<(f64, bool)> = set.items.iter().map(|p| (p.probs[class], p.label == class)).collect();
    let pos = scored.iter().filter(|s| s.1).count() as u64;
    let neg = scored.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "class {class} has {pos} positives and {neg} negatives; one-vs-rest curves need both"
        )));
    }
    Ok((scored, pos, neg))
}

/// Counts at every threshold in `extra` and every distinct score, highest
/// threshold first.
fn sweep(mut scored: Scored, extra: &[f64]) -> Vec<Counts> {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut thresholds: Vec<f64> = scored.iter().map(|s| s.0).chain(extra.iter().copied()).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut out = Vec::with_capacity(thresholds.len());
    let (mut i, mut tp, mut fp) = (0, 0, 0);
    for t in thresholds {
        while i < scored.len() && scored[i].0 >= t {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(Counts { threshold: t, tp, fp });
    }
    out
}

/// One-vs-rest ROC on the class's softmax score, swept over every distinct
/// score (plus `+inf`, the empty-positive point), and its trapezoidal area.
pub fn roc_auc(set: &PredictionSet, class: usize) -> Result<(Vec<CurvePoint>, f64)> {
    let (scored, pos, neg) = one_vs_rest(set, class)?;
    let points: Vec<CurvePoint> = sweep(scored, &[f64::INFINITY])
        .into_iter()
        .map(|c| CurvePoint { threshold: c.threshold, x: c.fp as f64 / neg as f64, y: c.tp as f64 / pos as f64 })
        .collect();
    let auc = points.windows(2).map(|w| (w[1].x - w[0].x) * (w[1].y + w[0].y) / 2.0).sum();
    Ok((points, auc))
}

/// Precision-recall points at thresholds {0, 1} and every distinct score.
/// Precision is 1 where nothing is predicted positive.
pub fn pr_curve(set: &PredictionSet, class: usize) -> Result<Vec<CurvePoint>> {
    let (scored, pos, _) = one_vs_rest(set, class)?;
    Ok(sweep(scored, &[0.0, 1.0])
        .into_iter()
        .map(|c| CurvePoint { threshold: c.threshold, x: c.tp as f64 / pos as f64, y: precision_of(c) })
        .collect())
}

/// F1 as a function of threshold, at thresholds {0, 1} and every distinct
/// score, in ascending threshold order.
pub fn f1_threshold_curve(set: &PredictionSet, class: usize) -> Result<Vec<CurvePoint>> {
    let (scored, pos, _) = one_vs_rest(set, class)?;
    let mut points: Vec<CurvePoint> = sweep(scored, &[0.0, 1.0])
        .into_iter()
        .map(|c| {
            let p = if c.tp + c.fp == 0 { 0.0 } else { precision_of(c) };
            let r = c.tp as f64 / pos as f64;
            let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            CurvePoint { threshold: c.threshold, x: c.threshold, y: f1 }
        })
        .collect();
    points.reverse();
    Ok(points)
}

fn precision_of(c: Counts) -> f64 {
    if c.tp + c.fp == 0 {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    }
}

/// Curves for one class; absent when the class lacks positives or
/// negatives in the evaluated set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCurves {
    pub class: usize,
    pub roc: Vec<CurvePoint>,
    pub auc: f64,
    pub pr: Vec<CurvePoint>,
    pub f1: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrRow {
    pub snr_db: f64,
    pub correct: u64,
    pub total: u64,
}

impl SnrRow {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub summary: Summary,
    pub curves: Vec<ClassCurves>,
    /// Accuracy per SNR tag, ascending (clean last).
    pub per_snr: Vec<SnrRow>,
}

pub fn class_names(classes: usize) -> Vec<String> {
    (0..classes)
        .map(|i| {
            u8::try_from(i)
                .ok()
                .and_then(ModulationClass::from_id)
                .map_or_else(|| format!("class{i}"), |c| c.name().to_string())
        })
        .collect()
}

/// All metrics for a prediction set. Classes without both positives and
/// negatives get no curves.
pub fn metrics(set: &PredictionSet) -> Result<MetricsReport> {
    let confusion = confusion_matrix(set)?;
    let summary = prf1(&confusion);
    let mut curves = Vec::new();
    for class in 0..set.classes {
        match roc_auc(set, class) {
            Ok((roc, auc)) => curves.push(ClassCurves {
                class,
                roc,
                auc,
                pr: pr_curve(set, class)?,
                f1: f1_threshold_curve(set, class)?,
            }),
            Err(Error::UndefinedMetric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let mut per_snr: Vec<SnrRow> = Vec::new();
    let mut order: Vec<&Prediction> = set.items.iter().collect();
    order.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
    for p in order {
        let hit = (argmax(&p.probs) == p.label) as u64;
        match per_snr.last_mut() {
            Some(row) if row.snr_db.to_bits() == p.snr_db.to_bits() => {
                row.correct += hit;
                row.total += 1;
            }
            _ => per_snr.push(SnrRow { snr_db: p.snr_db, correct: hit, total: 1 }),
        }
    }
    Ok(MetricsReport { class_names: class_names(set.classes), confusion, summary, curves, per_snr })
}

/// Inference over preprocessed samples, `chunk` frames per graph. With
/// `workers > 1` chunks run concurrently on a pool of that size, sharing
/// the parameters read-only.
pub fn predict_samples(model: &Model, samples: &[Sample], chunk: usize, workers: usize) -> Result<PredictionSet> {
    let run = |part: &[Sample]| -> Result<Vec<Prediction>> {
        let views: Vec<&[FeatureTensor]> = part.iter().map(|s| s.windows.as_slice()).collect();
        let probs = model.predict(&views)?;
        Ok(part.iter().zip(probs).map(|(s, probs)| Prediction { label: s.label, probs, snr_db: s.snr_db }).collect())
    };
    let chunks: Vec<&[Sample]> = samples.chunks(chunk.max(1)).collect();
    let parts: Vec<Vec<Prediction>> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| chunks.par_iter().map(|c| run(c)).collect::<Result<_>>())?
    } else {
        chunks.iter().map(|c| run(c)).collect::<Result<_>>()?
    };
    PredictionSet::new(model.config().classes, parts.into_iter().flatten().collect())
}

/// Runs a checkpoint over the selected corpus frames, windowed by `plan`,
/// and computes every metric. A plan that does not fit the checkpoint's
/// input geometry is a configuration error.
pub fn evaluate(
    checkpoint: &ModelCheckpoint,
    plan: &WindowPlan,
    corpus: &LabeledCorpus,
    indices: &[usize],
    workers: usize,
) -> Result<MetricsReport> {
    check_plan(plan, &checkpoint.architecture)?;
    let model = checkpoint.to_model()?;
    let samples = prepare(corpus, indices, plan, model.config())?;
    let set = predict_samples(&model, &samples, 16, workers)?;
    metrics(&set)
}
