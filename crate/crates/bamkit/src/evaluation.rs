//! Pixel-level comparison of predicted masks against reference masks.
//!
//! Each pair yields confusion counts and the four derived metrics
//! (accuracy, sensitivity, specificity, Jaccard). Batches aggregate two
//! ways: averaging per-image metrics (undefined entries excluded and
//! counted) and pooling counts before computing metrics once. Reports
//! print as an aligned text table or JSON, with `--` marking metrics whose
//! denominator is empty.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Pixel confusion counts for one mask pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.true_neg += other.true_neg;
        self.false_neg += other.false_neg;
    }

    pub fn zero() -> Self {
        ConfusionCounts {
            true_pos: 0,
            false_pos: 0,
            true_neg: 0,
            false_neg: 0,
        }
    }
}

/// A metric value or an explicit marker that its denominator was empty.
/// Serializes as the number itself or the string `"--"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricValue {
    Defined(f64),
    Undefined,
}

pub const UNDEFINED_MARKER: &str = "--";

impl MetricValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Defined(v) => Some(*v),
            MetricValue::Undefined => None,
        }
    }

    fn ratio(num: u64, den: u64) -> MetricValue {
        if den == 0 {
            MetricValue::Undefined
        } else {
            MetricValue::Defined(num as f64 / den as f64)
        }
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Defined(v) => write!(f, "{v:.4}"),
            MetricValue::Undefined => write!(f, "{UNDEFINED_MARKER}"),
        }
    }
}

impl Serialize for MetricValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MetricValue::Defined(v) => serializer.serialize_f64(*v),
            MetricValue::Undefined => serializer.serialize_str(UNDEFINED_MARKER),
        }
    }
}

impl<'de> Deserialize<'de> for MetricValue {
    fn deserialize<D: Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = MetricValue;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a number or \"{UNDEFINED_MARKER}\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<MetricValue, E> {
                Ok(MetricValue::Defined(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<MetricValue, E> {
                Ok(MetricValue::Defined(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<MetricValue, E> {
                Ok(MetricValue::Defined(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<MetricValue, E> {
                if v == UNDEFINED_MARKER {
                    Ok(MetricValue::Undefined)
                } else {
                    Err(E::custom(format!("unexpected metric string {v:?}")))
                }
            }
        }
        deserializer.deserialize_any(V)
    }
}

/// The four pixel metrics for one confusion-count set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: MetricValue,
    pub sensitivity: MetricValue,
    pub specificity: MetricValue,
    pub jaccard: MetricValue,
}

pub fn confusion_counts(pred: &BinaryMask, reference: &BinaryMask) -> Result<ConfusionCounts> {
    if pred.height() != reference.height() || pred.width() != reference.width() {
        return Err(Error::ShapeMismatch {
            op: "confusion_counts",
            detail: format!(
                "pred {}x{} vs reference {}x{}",
                pred.height(),
                pred.width(),
                reference.height(),
                reference.width()
            ),
        });
    }
    let mut c = ConfusionCounts::zero();
    for (&p, &r) in pred.bits().iter().zip(reference.bits()) {
        match (p, r) {
            (1, 1) => c.true_pos += 1,
            (1, 0) => c.false_pos += 1,
            (0, 1) => c.false_neg += 1,
            _ => c.true_neg += 1,
        }
    }
    Ok(c)
}

/// Derive the four metrics. Sensitivity is undefined without positive
/// reference pixels, specificity without negative ones; Jaccard of two
/// empty masks is 1 by convention (identical masks).
pub fn metrics(c: &ConfusionCounts) -> MetricSet {
    let jaccard_den = c.true_pos + c.false_pos + c.false_neg;
    MetricSet {
        accuracy: MetricValue::ratio(c.true_pos + c.true_neg, c.total()),
        sensitivity: MetricValue::ratio(c.true_pos, c.true_pos + c.false_neg),
        specificity: MetricValue::ratio(c.true_neg, c.true_neg + c.false_pos),
        jaccard: if jaccard_den == 0 {
            MetricValue::Defined(1.0)
        } else {
            MetricValue::ratio(c.true_pos, jaccard_den)
        },
    }
}

/// How a batch is summarized into one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMode {
    PerImageMean,
    PooledCounts,
}

/// Number of images whose per-image value was undefined and therefore
/// left out of the mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedCounts {
    pub accuracy: usize,
    pub sensitivity: usize,
    pub specificity: usize,
    pub jaccard: usize,
}

/// One aggregate row of the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metrics: MetricSet,
    pub undefined_excluded: UndefinedCounts,
}

/// Full evaluation of one predictor against one reference over a batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub comparison: String,
    pub mode: AggregationMode,
    pub images: usize,
    pub per_image: Vec<MetricSet>,
    pub per_image_mean: AggregateRow,
    pub pooled_counts: AggregateRow,
}

impl MetricsReport {
    /// The row selected by the report's primary aggregation mode.
    pub fn primary(&self) -> &AggregateRow {
        match self.mode {
            AggregationMode::PerImageMean => &self.per_image_mean,
            AggregationMode::PooledCounts => &self.pooled_counts,
        }
    }
}

/// Mean of the defined entries plus how many were excluded as undefined.
pub(crate) fn mean_defined(values: impl Iterator<Item = MetricValue>) -> (MetricValue, usize) {
    let mut sum = 0.0;
    let mut defined = 0usize;
    let mut undefined = 0usize;
    for v in values {
        match v {
            MetricValue::Defined(x) => {
                sum += x;
                defined += 1;
            }
            MetricValue::Undefined => undefined += 1,
        }
    }
    let mean = if defined == 0 {
        MetricValue::Undefined
    } else {
        MetricValue::Defined(sum / defined as f64)
    };
    (mean, undefined)
}

/// Evaluate every (pred, reference) pair and aggregate both ways; `mode`
/// only tags which row is primary.
pub fn batch_report(
    comparison: &str,
    pairs: &[(BinaryMask, BinaryMask)],
    mode: AggregationMode,
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput { op: "batch_report" });
    }
    let counts: Vec<ConfusionCounts> = pairs
        .iter()
        .map(|(p, r)| confusion_counts(p, r))
        .collect::<Result<_>>()?;
    let per_image: Vec<MetricSet> = counts.iter().map(metrics).collect();

    let (accuracy, acc_ex) = mean_defined(per_image.iter().map(|m| m.accuracy));
    let (sensitivity, sens_ex) = mean_defined(per_image.iter().map(|m| m.sensitivity));
    let (specificity, spec_ex) = mean_defined(per_image.iter().map(|m| m.specificity));
    let (jaccard, jac_ex) = mean_defined(per_image.iter().map(|m| m.jaccard));
    let per_image_mean = AggregateRow {
        metrics: MetricSet {
            accuracy,
            sensitivity,
            specificity,
            jaccard,
        },
        undefined_excluded: UndefinedCounts {
            accuracy: acc_ex,
            sensitivity: sens_ex,
            specificity: spec_ex,
            jaccard: jac_ex,
        },
    };

    let mut pooled = ConfusionCounts::zero();
    for c in &counts {
        pooled.add(c);
    }
    let pooled_counts = AggregateRow {
        metrics: metrics(&pooled),
        undefined_excluded: UndefinedCounts::default(),
    };

    Ok(MetricsReport {
        comparison: comparison.to_string(),
        mode,
        images: pairs.len(),
        per_image,
        per_image_mean,
        pooled_counts,
    })
}

/// Render reports as an aligned text table, one row per comparison, using
/// each report's primary aggregation.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let name_width = reports
        .iter()
        .map(|r| r.comparison.len())
        .chain(std::iter::once("comparison".len()))
        .max()
        .unwrap_or(10);
    let mut out = format!(
        "{:<name_width$}  {:>6}  {:>8}  {:>11}  {:>11}  {:>8}\n",
        "comparison", "images", "accuracy", "sensitivity", "specificity", "jaccard"
    );
    for r in reports {
        let m = &r.primary().metrics;
        out.push_str(&format!(
            "{:<name_width$}  {:>6}  {:>8}  {:>11}  {:>11}  {:>8}\n",
            r.comparison,
            r.images,
            m.accuracy.to_string(),
            m.sensitivity.to_string(),
            m.specificity.to_string(),
            m.jaccard.to_string(),
        ));
    }
    out
}
