//! Multiclass classifier evaluation from per-class scores.
//!
//! Builds the confusion matrix, per-class precision/recall/F1, and
//! one-vs-rest ROC curves with AUC, plus micro and macro averages. A
//! class with no support (or no predictions) gets the undefined marker
//! instead of a NaN. For single-label data the micro-averaged F1 equals
//! plain accuracy, which the tests assert as an identity.

use serde::{Deserialize, Serialize};

use crate::cnn::{argmax, predict_logits, Checkpoint};
use crate::error::{Error, Result};
use crate::evaluation::{mean_defined, MetricValue};
use crate::tensor::Tensor;

/// One-vs-rest ROC curve: (false-positive rate, true-positive rate)
/// points in threshold order, plus the trapezoidal area under them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub auc: MetricValue,
}

/// Sweep thresholds from high to low, advancing over tied scores as one
/// step so the curve (and its area) is tie-exact.
pub fn roc_curve(positives: &[bool], scores: &[f64]) -> RocCurve {
    assert_eq!(positives.len(), scores.len(), "roc inputs must align");
    let pos = positives.iter().filter(|&&p| p).count();
    let neg = positives.len() - pos;
    if pos == 0 || neg == 0 {
        return RocCurve {
            points: Vec::new(),
            auc: MetricValue::Undefined,
        };
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if positives[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        i = j;
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum();
    RocCurve {
        points,
        auc: MetricValue::Defined(auc),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    pub support: u64,
    pub predicted: u64,
    pub precision: MetricValue,
    pub recall: MetricValue,
    pub f1: MetricValue,
    pub auc: MetricValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfAverages {
    pub precision: MetricValue,
    pub recall: MetricValue,
    pub f1: MetricValue,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub num_classes: usize,
    pub samples: usize,
    pub accuracy: f64,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassReport>,
    pub micro: PrfAverages,
    #[serde(rename = "macro")]
    pub macro_avg: PrfAverages,
    pub micro_auc: MetricValue,
    pub macro_auc: MetricValue,
    /// Classes skipped by the macro averages for lack of support.
    pub undefined_classes: usize,
    pub roc: Vec<RocCurve>,
}

fn f1_of(precision: MetricValue, recall: MetricValue) -> MetricValue {
    match (precision.value(), recall.value()) {
        // the harmonic mean of equal values is that value; taking the
        // shortcut keeps micro-F1 bit-equal to accuracy
        (Some(p), Some(r)) if p == r => MetricValue::Defined(p),
        (Some(p), Some(r)) if p + r > 0.0 => MetricValue::Defined(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => MetricValue::Defined(0.0),
        _ => MetricValue::Undefined,
    }
}

/// Evaluate hard predictions (argmax of each row) and score-based ROC
/// from a full score matrix.
pub fn report_from_scores(
    labels: &[usize],
    scores: &[Vec<f64>],
    num_classes: usize,
) -> Result<ClassifierReport> {
    if labels.is_empty() || labels.len() != scores.len() {
        return Err(Error::EmptyInput {
            op: "classifier report",
        });
    }
    for row in scores {
        if row.len() != num_classes {
            return Err(Error::ShapeMismatch {
                op: "classifier report",
                detail: format!("score row of length {}, expected {num_classes}", row.len()),
            });
        }
    }
    for &label in labels {
        if label >= num_classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
    }

    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&label, row) in labels.iter().zip(scores) {
        confusion[label][argmax(row)] += 1;
    }
    let correct: u64 = (0..num_classes).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / labels.len() as f64;

    let mut per_class = Vec::with_capacity(num_classes);
    let mut roc = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let support: u64 = confusion[c].iter().sum();
        let predicted: u64 = (0..num_classes).map(|t| confusion[t][c]).sum();
        let tp = confusion[c][c];
        let precision = if predicted == 0 {
            MetricValue::Undefined
        } else {
            MetricValue::Defined(tp as f64 / predicted as f64)
        };
        let recall = if support == 0 {
            MetricValue::Undefined
        } else {
            MetricValue::Defined(tp as f64 / support as f64)
        };
        let positives: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let class_scores: Vec<f64> = scores.iter().map(|row| row[c]).collect();
        let curve = roc_curve(&positives, &class_scores);
        per_class.push(ClassReport {
            class: c,
            support,
            predicted,
            precision,
            recall,
            f1: f1_of(precision, recall),
            auc: curve.auc,
        });
        roc.push(curve);
    }

    // micro: pool the one-vs-rest counts; on single-label data this
    // makes precision, recall, and F1 all collapse to accuracy
    let total = labels.len() as u64;
    let micro_p = MetricValue::Defined(correct as f64 / total as f64);
    let micro = PrfAverages {
        precision: micro_p,
        recall: micro_p,
        f1: f1_of(micro_p, micro_p),
    };

    let (macro_p, _) = mean_defined(per_class.iter().map(|c| c.precision));
    let (macro_r, undefined_classes) = mean_defined(per_class.iter().map(|c| c.recall));
    let (macro_f, _) = mean_defined(per_class.iter().map(|c| c.f1));
    let (macro_auc, _) = mean_defined(per_class.iter().map(|c| c.auc));

    let mut pooled_pos = Vec::with_capacity(labels.len() * num_classes);
    let mut pooled_scores = Vec::with_capacity(labels.len() * num_classes);
    for (&label, row) in labels.iter().zip(scores) {
        for (c, &s) in row.iter().enumerate() {
            pooled_pos.push(label == c);
            pooled_scores.push(s);
        }
    }
    let micro_auc = roc_curve(&pooled_pos, &pooled_scores).auc;

    Ok(ClassifierReport {
        num_classes,
        samples: labels.len(),
        accuracy,
        confusion,
        per_class,
        micro,
        macro_avg: PrfAverages {
            precision: macro_p,
            recall: macro_r,
            f1: macro_f,
        },
        micro_auc,
        macro_auc,
        undefined_classes,
        roc,
    })
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Run the model over a labeled set and score it. Scores are softmax
/// probabilities, so ROC thresholds sweep a common [0,1] range.
pub fn evaluate_classifier(
    ckpt: &Checkpoint,
    set: &[(Tensor, usize)],
) -> Result<ClassifierReport> {
    if set.is_empty() {
        return Err(Error::EmptyInput {
            op: "evaluate_classifier",
        });
    }
    let mut labels = Vec::with_capacity(set.len());
    let mut scores = Vec::with_capacity(set.len());
    for (image, label) in set {
        labels.push(*label);
        scores.push(softmax(&predict_logits(ckpt, image)?));
    }
    report_from_scores(&labels, &scores, ckpt.config.num_classes)
}
