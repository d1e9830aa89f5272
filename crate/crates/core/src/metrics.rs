//! Classification metrics: mAP, macro-accuracy, AUROC, Cohen's kappa and
//! macro-F1.
//!
//! Count-based metrics predict by argmax for multi-class sets and by
//! `score > 0.5` for multi-label sets. AP ranks by descending score with
//! ties broken by example index; AUROC gives tied pairs half credit.

use crate::error::{Error, Result};
use crate::tensor::{LabelMatrix, TaskKind};

pub const MULTI_LABEL_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct PredictionSet {
    scores: Vec<f64>,
    labels: LabelMatrix,
    kind: TaskKind,
}

impl PredictionSet {
    pub fn new(scores: Vec<f64>, labels: LabelMatrix, kind: TaskKind) -> Result<Self> {
        let (n, c) = (labels.rows(), labels.cols());
        if n < 1 || c < 2 {
            return Err(Error::dim(format!(
                "prediction set needs N >= 1 and C >= 2, got {n}x{c}"
            )));
        }
        if scores.len() != n * c {
            return Err(Error::dim(format!(
                "{} scores for a {n}x{c} label matrix",
                scores.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Numeric("NaN score in prediction set".into()));
        }
        labels.validate(kind)?;
        Ok(PredictionSet {
            scores,
            labels,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn labels(&self) -> &LabelMatrix {
        &self.labels
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.num_classes() + j]
    }

    /// Scores of class `j` across examples.
    pub fn class_scores(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.score(i, j)).collect()
    }

    pub fn class_labels(&self, j: usize) -> Vec<bool> {
        (0..self.len()).map(|i| self.labels.get(i, j)).collect()
    }

    /// Argmax prediction of row `i` (first index on ties).
    pub fn argmax(&self, i: usize) -> usize {
        let c = self.num_classes();
        let row = &self.scores[i * c..(i + 1) * c];
        let mut best = 0;
        for (j, &s) in row.iter().enumerate() {
            if s > row[best] {
                best = j;
            }
        }
        best
    }

    /// Hard decision of example `i` for class `j`.
    pub fn predicted(&self, i: usize, j: usize) -> bool {
        match self.kind {
            TaskKind::MultiClass => self.argmax(i) == j,
            TaskKind::MultiLabel => self.score(i, j) > MULTI_LABEL_THRESHOLD,
        }
    }
}

/// A macro-averaged value together with the classes left out of the mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroScore {
    pub value: f64,
    pub per_class: Vec<Option<f64>>,
    /// Classes excluded because the per-class value is undefined.
    pub excluded: Vec<usize>,
}

fn macro_mean(name: &str, per_class: Vec<Option<f64>>) -> Result<MacroScore> {
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::MetricUndefined(format!(
            "{name}: every class is degenerate"
        )));
    }
    let excluded = per_class
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_none())
        .map(|(j, _)| j)
        .collect();
    Ok(MacroScore {
        value: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
        excluded,
    })
}

/// Mean of precision@k over the ranks k of the positives; `None` when there
/// are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            acc += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| acc / hits as f64)
}

pub fn mean_average_precision(ps: &PredictionSet) -> Result<MacroScore> {
    let per_class = (0..ps.num_classes())
        .map(|j| average_precision(&ps.class_scores(j), &ps.class_labels(j)))
        .collect();
    macro_mean("mAP", per_class)
}

/// Mann–Whitney AUROC via mid-ranks; `None` unless both classes occur.
pub fn binary_auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid = (start + 1 + end) as f64 / 2.0;
        let tied_pos = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += mid * tied_pos as f64;
        start = end;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn auroc(ps: &PredictionSet) -> Result<MacroScore> {
    let per_class = (0..ps.num_classes())
        .map(|j| binary_auroc(&ps.class_scores(j), &ps.class_labels(j)))
        .collect();
    macro_mean("AUROC", per_class)
}

/// One-vs-rest counts for class `j`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn class_counts(ps: &PredictionSet, j: usize) -> ClassCounts {
    let mut c = ClassCounts::default();
    for i in 0..ps.len() {
        match (ps.predicted(i, j), ps.labels.get(i, j)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

pub fn macro_accuracy(ps: &PredictionSet) -> f64 {
    let c = ps.num_classes();
    (0..c)
        .map(|j| {
            let k = class_counts(ps, j);
            (k.tp + k.tn) as f64 / (k.tp + k.tn + k.fp + k.fn_) as f64
        })
        .sum::<f64>()
        / c as f64
}

pub fn macro_f1(ps: &PredictionSet) -> f64 {
    let c = ps.num_classes();
    (0..c)
        .map(|j| {
            let k = class_counts(ps, j);
            let precision = if k.tp + k.fp == 0 {
                0.0
            } else {
                k.tp as f64 / (k.tp + k.fp) as f64
            };
            let recall = if k.tp + k.fn_ == 0 {
                0.0
            } else {
                k.tp as f64 / (k.tp + k.fn_) as f64
            };
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .sum::<f64>()
        / c as f64
}

/// Rows are ground truth, columns the argmax prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if classes < 2 || counts.len() != classes * classes {
            return Err(Error::dim(format!(
                "confusion matrix needs {classes}x{classes} counts, got {}",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn from_predictions(ps: &PredictionSet) -> Result<Self> {
        if ps.kind() != TaskKind::MultiClass {
            return Err(Error::MetricUndefined(
                "confusion matrix requires a multi-class prediction set".into(),
            ));
        }
        let c = ps.num_classes();
        let mut counts = vec![0u64; c * c];
        for i in 0..ps.len() {
            let truth = ps.labels.class_of(i).expect("validated one-hot");
            counts[truth * c + ps.argmax(i)] += 1;
        }
        ConfusionMatrix::new(c, counts)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Same matrix with classes relabelled: class `j` becomes `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let c = self.classes;
        let mut counts = vec![0u64; c * c];
        for t in 0..c {
            for p in 0..c {
                counts[perm[t] * c + perm[p]] = self.get(t, p);
            }
        }
        ConfusionMatrix::new(c, counts)
    }
}

pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let n = cm.total() as f64;
    if n == 0.0 {
        return Err(Error::MetricUndefined("kappa of an empty matrix".into()));
    }
    let c = cm.classes();
    let trace: u64 = (0..c).map(|j| cm.get(j, j)).sum();
    let p_o = trace as f64 / n;
    let p_c: f64 = (0..c)
        .map(|j| {
            let row: u64 = (0..c).map(|p| cm.get(j, p)).sum();
            let col: u64 = (0..c).map(|t| cm.get(t, j)).sum();
            row as f64 * col as f64
        })
        .sum::<f64>()
        / (n * n);
    if p_c == 1.0 {
        return Err(Error::MetricUndefined(
            "kappa: chance agreement is 1".into(),
        ));
    }
    Ok((p_o - p_c) / (1.0 - p_c))
}

/// Metric identifiers as used in reports and result files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    MeanAveragePrecision,
    Accuracy,
    Auroc,
    Kappa,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::MeanAveragePrecision,
        Metric::Accuracy,
        Metric::Auroc,
        Metric::Kappa,
        Metric::F1,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Metric::MeanAveragePrecision => "mAP",
            Metric::Accuracy => "accuracy",
            Metric::Auroc => "auroc",
            Metric::Kappa => "kappa",
            Metric::F1 => "f1",
        }
    }

    pub fn from_key(key: &str) -> Option<Metric> {
        Metric::ALL
            .into_iter()
            .find(|m| m.key().eq_ignore_ascii_case(key))
    }

    /// Default headline metric for a task kind.
    pub fn primary_for(kind: TaskKind) -> Metric {
        match kind {
            TaskKind::MultiLabel => Metric::MeanAveragePrecision,
            TaskKind::MultiClass => Metric::Accuracy,
        }
    }

    pub fn evaluate(self, ps: &PredictionSet) -> Result<f64> {
        match self {
            Metric::MeanAveragePrecision => mean_average_precision(ps).map(|m| m.value),
            Metric::Accuracy => Ok(macro_accuracy(ps)),
            Metric::Auroc => auroc(ps).map(|m| m.value),
            Metric::Kappa => cohen_kappa(&ConfusionMatrix::from_predictions(ps)?),
            Metric::F1 => Ok(macro_f1(ps)),
        }
    }
}

/// Every metric that is defined on `ps`, keyed by [`Metric::key`].
pub fn evaluate_all(ps: &PredictionSet) -> Vec<(Metric, f64)> {
    Metric::ALL
        .into_iter()
        .filter_map(|m| m.evaluate(ps).ok().map(|v| (m, v)))
        .collect()
}
