//! Percentile bootstrap over a fixed test set.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{scored_metrics, MetricSet};
use super::EvalError;

pub const DEFAULT_RESAMPLES: usize = 100;

/// Median and 2.5/97.5 percentiles of one metric across resamples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    /// Resamples on which the metric was defined.
    pub n: usize,
}

impl MetricSummary {
    /// `0.69 (0.63-0.75)` style cell.
    pub fn cell(&self) -> String {
        format!("{:.2} ({:.2}-{:.2})", self.median, self.lower, self.upper)
    }
}

/// Linear-interpolated percentile of sorted values, `q` in [0, 100].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn summarize(values: &[f64]) -> Option<MetricSummary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(MetricSummary {
        median: percentile(&v, 50.0),
        lower: percentile(&v, 2.5),
        upper: percentile(&v, 97.5),
        n: v.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDraw {
    /// Single-class resamples are kept for the record but excluded from
    /// every summary.
    pub degenerate: bool,
    pub metrics: MetricSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub seed: u64,
    pub n_resamples: usize,
    pub sample_size: usize,
    pub threshold: f64,
    pub draws: Vec<BootstrapDraw>,
    pub degenerate: usize,
    pub summary: BTreeMap<String, MetricSummary>,
}

/// Draws `n_resamples` index vectors with replacement, each as long as the
/// test set, and summarizes every metric across non-degenerate draws.
pub fn bootstrap(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapResult, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let n = scores.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(n_resamples);
    let mut s = vec![0.0; n];
    let mut l = vec![false; n];
    for _ in 0..n_resamples {
        for j in 0..n {
            let k = rng.random_range(0..n);
            s[j] = scores[k];
            l[j] = labels[k];
        }
        let positives = l.iter().filter(|&&x| x).count();
        draws.push(BootstrapDraw {
            degenerate: positives == 0 || positives == n,
            metrics: scored_metrics(&s, &l, threshold),
        });
    }
    let degenerate = draws.iter().filter(|d| d.degenerate).count();
    let mut summary = BTreeMap::new();
    for (i, name) in MetricSet::NAMES.iter().enumerate() {
        let values: Vec<f64> = draws
            .iter()
            .filter(|d| !d.degenerate)
            .filter_map(|d| d.metrics.values()[i])
            .collect();
        if let Some(m) = summarize(&values) {
            summary.insert(name.to_string(), m);
        }
    }
    Ok(BootstrapResult {
        seed,
        n_resamples,
        sample_size: n,
        threshold,
        draws,
        degenerate,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 5.0);
        assert!((percentile(&v, 2.5) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn constant_predictor_gives_zero_width_intervals() {
        let labels: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let r = bootstrap(&[0.2; 40], &labels, 0.5, 100, 9).unwrap();
        assert_eq!(r.draws.len(), 100);
        for name in ["auc", "sensitivity", "specificity"] {
            let m = r.summary[name];
            assert_eq!(m.lower, m.upper, "{name}");
        }
        assert_eq!(r.summary["auc"].cell(), "0.50 (0.50-0.50)");
        assert_eq!(r.summary["sensitivity"].cell(), "0.00 (0.00-0.00)");
        assert_eq!(r.summary["specificity"].cell(), "1.00 (1.00-1.00)");
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let scores: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let labels: Vec<bool> = (0..30).map(|i| i % 2 == 0).collect();
        let a = bootstrap(&scores, &labels, 0.0, 100, 4).unwrap();
        assert_eq!(a, bootstrap(&scores, &labels, 0.0, 100, 4).unwrap());
        assert_ne!(a, bootstrap(&scores, &labels, 0.0, 100, 5).unwrap());
    }

    #[test]
    fn degenerate_draws_are_counted() {
        let mut labels = vec![false; 20];
        labels[0] = true;
        let r = bootstrap(&[0.3; 20], &labels, 0.5, 100, 1).unwrap();
        assert!(r.degenerate > 0);
        assert_eq!(r.summary["auc"].n, 100 - r.degenerate);
    }
}
