//! Threshold-free and thresholded classification metrics.
//!
//! Positive class is "unstable" throughout; per-class and macro variants are
//! reported alongside so either convention can be read off.

use serde::{Deserialize, Serialize};

use super::EvalError;

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass { positives: pos, negatives: neg });
    }
    Ok((pos, neg))
}

/// Mann–Whitney AUC with ties credited one half.
///
/// Ranks are kept doubled so the statistic is an exact integer ratio.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Positions i..j share the mid-rank (i + 1 + j) / 2.
        let doubled_rank = (i + 1 + j) as u128;
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        doubled_rank_sum += doubled_rank * tied_pos;
        i = j;
    }
    let (p, n) = (pos as u128, neg as u128);
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2 * p * n) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve over the distinct observed thresholds, from (0, 0) at +∞ down
/// to (1, 1).
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predictions: &[bool], labels: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn harmonic(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if a + b > 0.0 => Some(2.0 * a * b / (a + b)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: usize,
}

/// Headline metrics (unstable positive) plus per-class and macro variants.
/// `None` marks a zero denominator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub auc: Option<f64>,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub stable: ClassMetrics,
    pub unstable: ClassMetrics,
    /// Macro averages count undefined per-class values as zero.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: Confusion,
}

impl MetricSet {
    pub const NAMES: [&'static str; 14] = [
        "auc",
        "precision",
        "sensitivity",
        "specificity",
        "f1",
        "stable_precision",
        "stable_recall",
        "stable_f1",
        "unstable_precision",
        "unstable_recall",
        "unstable_f1",
        "macro_precision",
        "macro_recall",
        "macro_f1",
    ];

    /// Values in [`MetricSet::NAMES`] order.
    pub fn values(&self) -> [Option<f64>; 14] {
        [
            self.auc,
            self.precision,
            self.sensitivity,
            self.specificity,
            self.f1,
            self.stable.precision,
            self.stable.recall,
            self.stable.f1,
            self.unstable.precision,
            self.unstable.recall,
            self.unstable.f1,
            Some(self.macro_precision),
            Some(self.macro_recall),
            Some(self.macro_f1),
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES
            .iter()
            .position(|n| *n == name)
            .and_then(|i| self.values()[i])
    }
}

/// Confusion-derived metrics for binary predictions (`true` = unstable).
pub fn confusion_metrics(predictions: &[bool], labels: &[bool]) -> MetricSet {
    let c = Confusion::from_predictions(predictions, labels);
    let unstable = {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        ClassMetrics {
            precision,
            recall,
            f1: harmonic(precision, recall),
            support: c.tp + c.fn_,
        }
    };
    let stable = {
        let precision = ratio(c.tn, c.tn + c.fn_);
        let recall = ratio(c.tn, c.tn + c.fp);
        ClassMetrics {
            precision,
            recall,
            f1: harmonic(precision, recall),
            support: c.tn + c.fp,
        }
    };
    let mean0 = |a: Option<f64>, b: Option<f64>| (a.unwrap_or(0.0) + b.unwrap_or(0.0)) / 2.0;
    MetricSet {
        auc: None,
        precision: unstable.precision,
        sensitivity: unstable.recall,
        specificity: stable.recall,
        f1: unstable.f1,
        macro_precision: mean0(stable.precision, unstable.precision),
        macro_recall: mean0(stable.recall, unstable.recall),
        macro_f1: mean0(stable.f1, unstable.f1),
        stable,
        unstable,
        confusion: c,
    }
}

/// Confusion metrics at `score ≥ threshold`, plus AUC when both classes are
/// present.
pub fn scored_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> MetricSet {
    let predictions: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    let mut m = confusion_metrics(&predictions, labels);
    m.auc = auc(scores, labels).ok();
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YoudenChoice {
    pub threshold: f64,
    pub j: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Threshold maximizing `J = sensitivity + specificity − 1` over the observed
/// scores, predicting positive when `score ≥ τ`. Ties go to the highest τ.
pub fn youden_threshold(scores: &[f64], labels: &[bool]) -> Result<YoudenChoice, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // J·P·N = tp·N − fp·P, compared exactly in integers.
    let (p, n) = (pos as i128, neg as i128);
    let mut best: Option<(i128, f64, usize, usize)> = None;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let scaled = tp as i128 * n - fp as i128 * p;
        if best.is_none_or(|b| scaled > b.0) {
            best = Some((scaled, threshold, tp, fp));
        }
    }
    let (scaled, threshold, tp, fp) = best.expect("nonempty scores");
    Ok(YoudenChoice {
        threshold,
        j: scaled as f64 / (p * n) as f64,
        sensitivity: tp as f64 / pos as f64,
        specificity: (neg - fp) as f64 / neg as f64,
    })
}
