//! Classification metrics: confusion matrix, accuracy, macro precision /
//! recall / F1 and macro one-vs-rest ROC AUC (Mann-Whitney form, ties count
//! one half).

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, LabError, Result};

/// `C x C` counts; entry `(i, j)` is label `i` predicted as `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl Confusion {
    pub fn get(&self, label: usize, pred: usize) -> u64 {
        self.counts[label * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes).map(<[u64]>::to_vec).collect()
    }
}

pub fn confusion_matrix(preds: &[usize], labels: &[usize], classes: usize) -> Result<Confusion> {
    if preds.len() != labels.len() {
        return Err(LabError::Contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut counts = vec![0; classes * classes];
    for (&p, &l) in preds.iter().zip(labels) {
        for v in [p, l] {
            if v >= classes {
                return Err(LabError::Index { op: "confusion_matrix", index: v, bound: classes });
            }
        }
        counts[l * classes + p] += 1;
    }
    Ok(Confusion { classes, counts })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro averages skip classes that are neither true nor predicted anywhere.
pub fn classification_metrics(confusion: &Confusion) -> ClassificationMetrics {
    let c = confusion.classes;
    let n = confusion.total();
    let trace: u64 = (0..c).map(|i| confusion.get(i, i)).sum();
    let (mut f1, mut rec, mut pre, mut present) = (0.0, 0.0, 0.0, 0usize);
    for k in 0..c {
        let tp = confusion.get(k, k);
        let actual: u64 = (0..c).map(|j| confusion.get(k, j)).sum();
        let predicted: u64 = (0..c).map(|i| confusion.get(i, k)).sum();
        if actual == 0 && predicted == 0 {
            continue;
        }
        present += 1;
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        pre += p;
        rec += r;
        f1 += ratio(2 * tp, actual + predicted);
    }
    let avg = |s: f64| if present == 0 { 0.0 } else { s / present as f64 };
    ClassificationMetrics {
        accuracy: ratio(trace, n),
        macro_f1: avg(f1),
        macro_recall: avg(rec),
        macro_precision: avg(pre),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroAuc {
    pub macro_auc: f64,
    /// Per-class AUC, `None` where the class lacks positives or negatives.
    pub per_class: Vec<Option<f64>>,
}

impl MacroAuc {
    pub fn skipped(&self) -> Vec<usize> {
        self.per_class.iter().enumerate().filter(|(_, a)| a.is_none()).map(|(i, _)| i).collect()
    }
}

/// Mann-Whitney AUC of `scores` against boolean membership, in O(m log m).
/// Returns `None` when one side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // Ascending sweep: each positive beats every negative strictly below it;
    // a tied group adds half a win per (positive, negative) pair inside it.
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let pos_here = order[i..j].iter().filter(|&&k| positive[k]).count();
        let neg_here = (j - i) - pos_here;
        wins += pos_here as f64 * neg_below as f64 + 0.5 * (pos_here * neg_here) as f64;
        neg_below += neg_here;
        i = j;
    }
    Some(wins / (n_pos as f64 * n_neg as f64))
}

/// Macro one-vs-rest AUC over the columns of a row-major `m x classes` score matrix.
pub fn macro_auc_ovr(scores: &[f64], classes: usize, labels: &[usize]) -> Result<MacroAuc> {
    if scores.len() != labels.len() * classes {
        return Err(shape_err("macro_auc_ovr", labels.len() * classes, scores.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(LabError::Index { op: "macro_auc_ovr", index: bad, bound: classes });
    }
    let per_class: Vec<Option<f64>> = (0..classes)
        .map(|c| {
            let col: Vec<f64> = scores.chunks(classes).map(|r| r[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            binary_auc(&col, &pos)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(LabError::UndefinedAuc);
    }
    Ok(MacroAuc { macro_auc: defined.iter().sum::<f64>() / defined.len() as f64, per_class })
}

/// Index of the largest score per row; earliest wins ties.
pub fn argmax_rows(scores: &[f64], classes: usize) -> Vec<usize> {
    scores
        .chunks(classes)
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Metrics for one task head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_auc: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub confusion: Confusion,
    pub n: usize,
    /// Classes excluded from the AUC average.
    pub auc_skipped: Vec<usize>,
}

impl TaskMetrics {
    pub fn from_scores(scores: &[f64], classes: usize, labels: &[usize]) -> Result<Self> {
        let preds = argmax_rows(scores, classes);
        let confusion = confusion_matrix(&preds, labels, classes)?;
        let m = classification_metrics(&confusion);
        let auc = macro_auc_ovr(scores, classes, labels)?;
        Ok(Self {
            accuracy: m.accuracy,
            macro_f1: m.macro_f1,
            macro_auc: auc.macro_auc,
            macro_recall: m.macro_recall,
            macro_precision: m.macro_precision,
            auc_skipped: auc.skipped(),
            confusion,
            n: labels.len(),
        })
    }
}

/// Per-task metrics; a task is absent when the model has no head for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task_a: Option<TaskMetrics>,
    pub task_b: Option<TaskMetrics>,
}
