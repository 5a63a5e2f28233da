//! Evaluation protocol: patient-grouped splits, training with early stopping,
//! metrics, the SOFA baseline and bootstrap reports.

mod bootstrap;
mod metrics;
mod split;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bootstrap::{bootstrap, percentile, summarize, BootstrapDraw, BootstrapResult, MetricSummary, DEFAULT_RESAMPLES};
pub use metrics::{
    auc, confusion_metrics, roc_curve, scored_metrics, youden_threshold, ClassMetrics, Confusion, MetricSet, RocPoint,
    YoudenChoice,
};
pub use split::{assert_no_leakage, make_split, Assignment, DevSet, Holdout, PatientStratum, SplitPlan};
pub use train::{cross_validate, fit_for_epochs, predict, train, train_fold, FoldReport, TrainConfig, TrainOutcome};

use crate::autodiff::AutodiffError;
use crate::hpo::Hyperparameters;
use crate::models::{FusionInputs, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("patient {0} is not in the split plan")]
    UnknownPatient(String),
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score {0} is not finite")]
    NonFiniteScore(usize),
    #[error("metric undefined: {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("empty test set")]
    EmptyTestSet,
    #[error("fold {0} has no training or validation samples")]
    EmptyFold(usize),
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Input combinations compared in the results table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "sofa")]
    Sofa,
    #[serde(rename = "accel")]
    Accel,
    #[serde(rename = "accel+demo")]
    AccelDemo,
    #[serde(rename = "accel+clinical")]
    AccelClinical,
    #[serde(rename = "accel+demo+clinical")]
    AccelDemoClinical,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Sofa,
        Scenario::Accel,
        Scenario::AccelDemo,
        Scenario::AccelClinical,
        Scenario::AccelDemoClinical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Sofa => "sofa",
            Scenario::Accel => "accel",
            Scenario::AccelDemo => "accel+demo",
            Scenario::AccelClinical => "accel+clinical",
            Scenario::AccelDemoClinical => "accel+demo+clinical",
        }
    }

    /// Row label in the metrics table.
    pub fn row_label(self) -> &'static str {
        match self {
            Scenario::Sofa => "SOFA",
            Scenario::Accel => "Accel",
            Scenario::AccelDemo => "Accel + Demo",
            Scenario::AccelClinical => "Accel + Clinical",
            Scenario::AccelDemoClinical => "Accel + Demo + Clinical",
        }
    }

    /// File-system friendly name.
    pub fn slug(self) -> String {
        self.as_str().replace('+', "_")
    }

    /// EHR blocks fused into the model; `None` for the SOFA baseline.
    pub fn fusion(self) -> Option<FusionInputs> {
        let f = |demographics, clinical| Some(FusionInputs { demographics, clinical });
        match self {
            Scenario::Sofa => None,
            Scenario::Accel => f(false, false),
            Scenario::AccelDemo => f(true, false),
            Scenario::AccelClinical => f(false, true),
            Scenario::AccelDemoClinical => f(true, true),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown scenario `{s}`"))
    }
}

/// Per-fold diagnostics carried into the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

/// Holdout evaluation of one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: Scenario,
    pub seed: u64,
    /// Positive prediction when `score ≥ threshold`.
    pub threshold: f64,
    pub n_test: usize,
    /// Test windows without a usable score (missing SOFA).
    pub dropped: usize,
    pub point: MetricSet,
    pub summary: BTreeMap<String, MetricSummary>,
    pub n_resamples: usize,
    pub degenerate_resamples: usize,
    pub bootstrap: Vec<BootstrapDraw>,
    pub hyperparameters: Option<Hyperparameters>,
    pub folds: Vec<FoldSummary>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl EvalReport {
    pub fn check_complete(&self) -> Result<(), String> {
        if self.bootstrap.is_empty() {
            return Err("bootstrap list is empty".into());
        }
        if self.bootstrap.len() != self.n_resamples {
            return Err(format!(
                "{} bootstrap draws recorded, {} declared",
                self.bootstrap.len(),
                self.n_resamples
            ));
        }
        if self.scores.len() != self.n_test || self.labels.len() != self.n_test {
            return Err(format!("test set size {} does not match stored scores", self.n_test));
        }
        for (name, m) in &self.summary {
            if !(m.lower <= m.median && m.median <= m.upper) {
                return Err(format!("interval for {name} is not ordered"));
            }
        }
        Ok(())
    }

    pub fn roc(&self) -> Result<Vec<RocPoint>, EvalError> {
        roc_curve(&self.scores, &self.labels)
    }
}

/// Point metrics plus a percentile bootstrap over the test scores.
pub fn bootstrap_report(
    scenario: Scenario,
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
    n_resamples: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let b = bootstrap(scores, labels, threshold, n_resamples, seed)?;
    Ok(EvalReport {
        scenario,
        seed,
        threshold,
        n_test: scores.len(),
        dropped: 0,
        point: scored_metrics(scores, labels, threshold),
        summary: b.summary,
        n_resamples,
        degenerate_resamples: b.degenerate,
        bootstrap: b.draws,
        hyperparameters: None,
        folds: Vec::new(),
        scores: scores.to_vec(),
        labels: labels.to_vec(),
    })
}

pub fn sofa_score(sofa: u8) -> f64 {
    f64::from(sofa) / 24.0
}

/// Windows with a SOFA value, scored as `sofa / 24`.
#[derive(Clone, Debug, PartialEq)]
pub struct SofaScores {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub kept: Vec<usize>,
    pub dropped: usize,
}

pub fn sofa_scores(sofa: &[Option<u8>], labels: &[bool]) -> SofaScores {
    let mut out = SofaScores {
        scores: Vec::new(),
        labels: Vec::new(),
        kept: Vec::new(),
        dropped: 0,
    };
    for (i, (s, &l)) in sofa.iter().zip(labels).enumerate() {
        match s {
            Some(v) => {
                out.scores.push(sofa_score(*v));
                out.labels.push(l);
                out.kept.push(i);
            }
            None => out.dropped += 1,
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SofaBaseline {
    pub choice: YoudenChoice,
    pub data: SofaScores,
    pub predictions: Vec<bool>,
    pub metrics: MetricSet,
}

/// Youden-optimal threshold on normalized SOFA, with the resulting
/// predictions and metrics on the same windows.
pub fn sofa_baseline(sofa: &[Option<u8>], labels: &[bool]) -> Result<SofaBaseline, EvalError> {
    let data = sofa_scores(sofa, labels);
    let choice = youden_threshold(&data.scores, &data.labels)?;
    let predictions: Vec<bool> = data.scores.iter().map(|&s| s >= choice.threshold).collect();
    let metrics = scored_metrics(&data.scores, &data.labels, choice.threshold);
    Ok(SofaBaseline {
        choice,
        data,
        predictions,
        metrics,
    })
}
