//! Random hyperparameter search with median pruning at fold boundaries.
//!
//! Each trial's configuration is a pure function of the search seed and the
//! trial id, so a trial log can be replayed and resumed. Trials run on up to
//! `workers` threads sharing one registry; a single worker is deterministic.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSample;
use crate::eval::{fit_for_epochs, train_fold, DevSet, EvalError, TrainConfig};
use crate::models::{AcuityModel, Family, ModelSpec};
use crate::seed::{derive_indexed, derive_seed};
use crate::signal::SignalError;

#[derive(Debug, thiserror::Error)]
pub enum HpoError {
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error("all {0} trials failed or were pruned")]
    AllFailed(usize),
    #[error("trial log {path}: {reason}")]
    Log { path: String, reason: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub family: Family,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub downsample_factor: usize,
}

impl Hyperparameters {
    pub fn model_spec(&self, template: ModelSpec) -> ModelSpec {
        ModelSpec {
            family: self.family,
            ..template
        }
    }

    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub families: Vec<Family>,
    pub batch_sizes: Vec<usize>,
    /// Log-uniform bounds, inclusive.
    pub learning_rate: (f64, f64),
    pub weight_decay: (f64, f64),
    pub downsample_factors: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            batch_sizes: vec![8, 16, 24, 32],
            learning_rate: (1e-5, 1e-1),
            weight_decay: (1e-10, 1e-3),
            downsample_factors: vec![1, 2, 4],
        }
    }
}

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi)
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), HpoError> {
        let bad = |what: &str| Err(HpoError::InvalidConfig(what.to_string()));
        if self.families.is_empty() || self.batch_sizes.is_empty() || self.downsample_factors.is_empty() {
            return bad("every categorical dimension needs at least one value");
        }
        for (name, (lo, hi)) in [("learning_rate", self.learning_rate), ("weight_decay", self.weight_decay)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(&format!("{name} bounds must satisfy 0 < lo <= hi"));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Hyperparameters {
        Hyperparameters {
            family: *self.families.choose(rng).expect("nonempty"),
            batch_size: *self.batch_sizes.choose(rng).expect("nonempty"),
            learning_rate: log_uniform(rng, self.learning_rate),
            weight_decay: log_uniform(rng, self.weight_decay),
            downsample_factor: *self.downsample_factors.choose(rng).expect("nonempty"),
        }
    }

    /// Configuration of trial `id` under a search seed.
    pub fn sample_trial(&self, seed: u64, id: usize) -> Hyperparameters {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(seed, "trial", id as u64));
        self.sample(&mut rng)
    }

    pub fn contains(&self, h: &Hyperparameters) -> bool {
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        self.families.contains(&h.family)
            && self.batch_sizes.contains(&h.batch_size)
            && within(h.learning_rate, self.learning_rate)
            && within(h.weight_decay, self.weight_decay)
            && self.downsample_factors.contains(&h.downsample_factor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Running,
    Pruned,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub config: Hyperparameters,
    pub fold_aucs: Vec<f64>,
    pub best_epochs: Vec<usize>,
    pub status: TrialStatus,
    /// Mean fold AUC; set only for complete trials.
    pub objective: Option<f64>,
    pub error: Option<String>,
}

impl Trial {
    pub fn running_mean(&self, upto: usize) -> f64 {
        running_mean(&self.fold_aucs, upto)
    }
}

fn running_mean(aucs: &[f64], upto: usize) -> f64 {
    aucs[..=upto].iter().sum::<f64>() / (upto + 1) as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Prunes a trial whose running mean fold AUC falls strictly below the
/// median of the completed trials' running means at the same fold index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianPruner {
    /// Completed trials required before any pruning.
    pub n_startup_trials: usize,
}

impl Default for MedianPruner {
    fn default() -> Self {
        Self { n_startup_trials: 5 }
    }
}

impl MedianPruner {
    pub const DISABLED: MedianPruner = MedianPruner {
        n_startup_trials: usize::MAX,
    };

    /// `completed` holds the fold AUCs of complete trials; `current` those
    /// of the trial under consideration, ending at the fold just finished.
    pub fn should_prune(&self, completed: &[&[f64]], current: &[f64]) -> bool {
        let Some(fold) = current.len().checked_sub(1) else {
            return false;
        };
        let peers: Vec<f64> = completed
            .iter()
            .filter(|a| a.len() > fold)
            .map(|a| running_mean(a, fold))
            .collect();
        if peers.len() < self.n_startup_trials {
            return false;
        }
        running_mean(current, fold) < median(peers)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub n_trials: usize,
    pub n_folds: usize,
    pub seed: u64,
    pub workers: usize,
    pub pruner: MedianPruner,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            n_trials: 30,
            n_folds: 3,
            seed: 0,
            workers: 1,
            pruner: MedianPruner::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FoldOutcome {
    pub auc: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub best: Trial,
    /// Every trial, ordered by id.
    pub trials: Vec<Trial>,
}

fn log_error(path: &Path, reason: impl ToString) -> HpoError {
    HpoError::Log {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

/// Reads a line-delimited JSON trial log.
pub fn read_trial_log(path: &Path) -> Result<Vec<Trial>, HpoError> {
    let file = std::fs::File::open(path).map_err(|e| log_error(path, e))?;
    let mut trials = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| log_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trial = serde_json::from_str(&line).map_err(|e| log_error(path, format!("line {}: {e}", i + 1)))?;
        trials.push(t);
    }
    Ok(trials)
}

struct Registry {
    trials: BTreeMap<usize, Trial>,
    log: Option<std::fs::File>,
}

/// Runs `n_trials` trials of up to `n_folds` folds each. `objective` is
/// called as `(config, fold, trial_seed)`; an `Err` fails the trial.
///
/// With `log`, finished trials already recorded there are reused after
/// checking their configuration against the sampler, and every newly
/// finished trial is appended.
pub fn run_search<F>(
    space: &SearchSpace,
    cfg: &SearchConfig,
    objective: F,
    log: Option<&Path>,
) -> Result<SearchOutcome, HpoError>
where
    F: Fn(&Hyperparameters, usize, u64) -> Result<FoldOutcome, String> + Sync,
{
    space.validate()?;
    if cfg.n_trials == 0 || cfg.n_folds == 0 {
        return Err(HpoError::InvalidConfig("n_trials and n_folds must be at least 1".into()));
    }
    let mut trials = BTreeMap::new();
    let mut log_file = None;
    if let Some(path) = log {
        if path.exists() {
            for t in read_trial_log(path)? {
                if t.id >= cfg.n_trials || t.status == TrialStatus::Running {
                    continue;
                }
                if t.config != space.sample_trial(cfg.seed, t.id) {
                    return Err(log_error(path, format!("trial {} was sampled under a different seed or space", t.id)));
                }
                trials.insert(t.id, t);
            }
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| log_error(path, e))?;
        log_file = Some(file);
    }
    let pending: Vec<usize> = (0..cfg.n_trials).filter(|id| !trials.contains_key(id)).collect();
    let registry = Mutex::new(Registry { trials, log: log_file });
    let next = AtomicUsize::new(0);
    let log_failure: Mutex<Option<HpoError>> = Mutex::new(None);

    let worker = || loop {
        let k = next.fetch_add(1, Ordering::SeqCst);
        let Some(&id) = pending.get(k) else { break };
        let trial = run_trial(space, cfg, &objective, id, &registry);
        let mut reg = registry.lock().expect("registry lock");
        if let Some(file) = reg.log.as_mut() {
            let line = serde_json::to_string(&trial).expect("trial serializes");
            if let Err(e) = writeln!(file, "{line}") {
                *log_failure.lock().expect("log lock") = Some(log_error(log.expect("log path"), e));
            }
        }
        reg.trials.insert(id, trial);
    };
    if cfg.workers <= 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..cfg.workers {
                s.spawn(worker);
            }
        });
    }
    if let Some(e) = log_failure.into_inner().expect("log lock") {
        return Err(e);
    }
    let trials: Vec<Trial> = registry.into_inner().expect("registry lock").trials.into_values().collect();
    let best = trials
        .iter()
        .filter_map(|t| t.objective.map(|o| (o, t)))
        .fold(None::<(f64, &Trial)>, |acc, (o, t)| match acc {
            Some((b, _)) if b >= o => acc,
            _ => Some((o, t)),
        })
        .map(|(_, t)| t.clone())
        .ok_or(HpoError::AllFailed(trials.len()))?;
    Ok(SearchOutcome { best, trials })
}

fn run_trial<F>(space: &SearchSpace, cfg: &SearchConfig, objective: &F, id: usize, registry: &Mutex<Registry>) -> Trial
where
    F: Fn(&Hyperparameters, usize, u64) -> Result<FoldOutcome, String>,
{
    let mut trial = Trial {
        id,
        config: space.sample_trial(cfg.seed, id),
        fold_aucs: Vec::new(),
        best_epochs: Vec::new(),
        status: TrialStatus::Running,
        objective: None,
        error: None,
    };
    let seed = derive_indexed(cfg.seed, "trial-seed", id as u64);
    for fold in 0..cfg.n_folds {
        match objective(&trial.config, fold, seed) {
            Ok(out) if out.auc.is_finite() => {
                trial.fold_aucs.push(out.auc);
                trial.best_epochs.push(out.best_epoch);
            }
            Ok(out) => {
                trial.status = TrialStatus::Failed;
                trial.error = Some(format!("fold {fold}: non-finite AUC {}", out.auc));
                return trial;
            }
            Err(e) => {
                trial.status = TrialStatus::Failed;
                trial.error = Some(format!("fold {fold}: {e}"));
                return trial;
            }
        }
        if fold + 1 < cfg.n_folds {
            let reg = registry.lock().expect("registry lock");
            let completed: Vec<&[f64]> = reg
                .trials
                .values()
                .filter(|t| t.status == TrialStatus::Complete)
                .map(|t| t.fold_aucs.as_slice())
                .collect();
            if cfg.pruner.should_prune(&completed, &trial.fold_aucs) {
                trial.status = TrialStatus::Pruned;
                return trial;
            }
        }
    }
    trial.status = TrialStatus::Complete;
    trial.objective = Some(trial.fold_aucs.iter().sum::<f64>() / trial.fold_aucs.len() as f64);
    trial
}

/// Cross-validation objective over a development set. Windows are
/// decimated once per downsample factor.
pub struct DevObjective<'a> {
    decimated: BTreeMap<usize, DevSet<LabeledSample>>,
    template: ModelSpec,
    base: &'a TrainConfig,
}

impl<'a> DevObjective<'a> {
    pub fn new(
        dev: &DevSet<LabeledSample>,
        space: &SearchSpace,
        template: ModelSpec,
        base: &'a TrainConfig,
    ) -> Result<Self, HpoError> {
        let mut decimated = BTreeMap::new();
        for &f in &space.downsample_factors {
            decimated.insert(f, dev.map_ref(|s| s.decimated(f)).try_map(|r| r)?);
        }
        Ok(Self {
            decimated,
            template,
            base,
        })
    }

    pub fn evaluate(&self, h: &Hyperparameters, fold: usize, seed: u64) -> Result<FoldOutcome, String> {
        let dev = self
            .decimated
            .get(&h.downsample_factor)
            .ok_or_else(|| format!("downsample factor {} not prepared", h.downsample_factor))?;
        let cfg = TrainConfig {
            seed,
            ..h.train_config(self.base)
        };
        let (report, _) = train_fold(dev, h.model_spec(self.template), &cfg, fold).map_err(|e| e.to_string())?;
        Ok(FoldOutcome {
            auc: report.best_val_auc,
            best_epoch: report.best_epoch,
        })
    }
}

/// Number of epochs used when retraining on the whole development set: the
/// rounded mean of the best epochs found across folds, at least one.
pub fn final_epochs(best: &Trial) -> usize {
    if best.best_epochs.is_empty() {
        return 1;
    }
    let mean = best.best_epochs.iter().sum::<usize>() as f64 / best.best_epochs.len() as f64;
    (mean.round() as usize).max(1)
}

/// Trains one model with the chosen configuration on all development
/// samples. Returns the model and its per-epoch training loss.
pub fn finalize(
    best: &Trial,
    dev: &DevSet<LabeledSample>,
    template: ModelSpec,
    base: &TrainConfig,
    seed: u64,
) -> Result<(AcuityModel, Vec<f64>), HpoError> {
    if best.status != TrialStatus::Complete {
        return Err(HpoError::InvalidConfig(format!("trial {} is not complete", best.id)));
    }
    let h = &best.config;
    let samples: Vec<LabeledSample> = dev
        .items()
        .iter()
        .map(|s| s.decimated(h.downsample_factor))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&LabeledSample> = samples.iter().collect();
    let seed = derive_seed(seed, "final");
    let first = refs.first().ok_or(EvalError::EmptyTestSet)?;
    let mut model = AcuityModel::build(h.model_spec(template), first.window.len(), seed).map_err(EvalError::from)?;
    let cfg = TrainConfig {
        seed,
        ..h.train_config(base)
    };
    let losses = fit_for_epochs(&mut model, &refs, final_epochs(best), &cfg)?;
    Ok((model, losses))
}
