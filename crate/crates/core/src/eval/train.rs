use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{assert_no_leakage, auc, DevSet, EvalError};
use crate::autodiff::{sigmoid, AdamW};
use crate::dataset::{batch, LabeledSample};
use crate::models::{AcuityModel, ModelSpec};
use crate::seed::derive_indexed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub val_auc: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub epochs_run: usize,
}

fn run_epoch(
    model: &mut AcuityModel,
    opt: &mut AdamW,
    samples: &[&LabeledSample],
    order: &[usize],
    batch_size: usize,
    epoch: usize,
) -> Result<f64, EvalError> {
    let fusion = model.spec().fusion;
    let mut total = 0.0;
    for chunk in order.chunks(batch_size.max(1)) {
        let refs: Vec<&LabeledSample> = chunk.iter().map(|&i| samples[i]).collect();
        let (x, e, y) = batch(&refs, fusion);
        let (loss, grads) = model.loss_and_gradients(&x, e.as_ref(), &y)?;
        if !loss.is_finite() {
            return Err(EvalError::NonFiniteLoss { epoch });
        }
        opt.step(model.params_mut(), &grads)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// AdamW on shuffled mini-batches with early stopping on validation AUC.
/// The parameters of the best epoch are restored before returning.
pub fn train(
    model: &mut AcuityModel,
    train: &[&LabeledSample],
    val: &[&LabeledSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, EvalError> {
    if train.is_empty() || val.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let val_labels: Vec<bool> = val.iter().map(|s| s.unstable).collect();
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut outcome = TrainOutcome {
        best_epoch: 0,
        best_val_auc: f64::NEG_INFINITY,
        val_auc: Vec::new(),
        train_loss: Vec::new(),
        epochs_run: 0,
    };
    let mut best_params = model.params().clone();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let loss = run_epoch(model, &mut opt, train, &order, cfg.batch_size, epoch)?;
        outcome.train_loss.push(loss);
        let scores = predict(model, val, cfg.batch_size)?;
        let score = auc(&scores, &val_labels)?;
        outcome.val_auc.push(score);
        outcome.epochs_run = epoch;
        if score > outcome.best_val_auc {
            outcome.best_val_auc = score;
            outcome.best_epoch = epoch;
            best_params = model.params().clone();
        } else if epoch - outcome.best_epoch >= cfg.patience {
            break;
        }
    }
    model.load_params(best_params)?;
    Ok(outcome)
}

/// Trains for a fixed number of epochs without validation. Returns the
/// per-epoch training loss.
pub fn fit_for_epochs(
    model: &mut AcuityModel,
    train: &[&LabeledSample],
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<Vec<f64>, EvalError> {
    if train.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        losses.push(run_epoch(model, &mut opt, train, &order, cfg.batch_size, epoch)?);
    }
    Ok(losses)
}

/// Predicted probability of instability for each sample.
pub fn predict(model: &AcuityModel, samples: &[&LabeledSample], batch_size: usize) -> Result<Vec<f64>, EvalError> {
    let fusion = model.spec().fusion;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let (x, e, _) = batch(chunk, fusion);
        out.extend(model.logits(&x, e.as_ref())?.into_iter().map(sigmoid));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub val_auc: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub n_train: usize,
    pub n_val: usize,
}

/// Builds a fresh model and trains it on every fold but `fold`.
pub fn train_fold(
    dev: &DevSet<LabeledSample>,
    spec: ModelSpec,
    cfg: &TrainConfig,
    fold: usize,
) -> Result<(FoldReport, AcuityModel), EvalError> {
    let (tr, va) = dev.fold(fold);
    if tr.is_empty() || va.is_empty() {
        return Err(EvalError::EmptyFold(fold));
    }
    assert_no_leakage(
        tr.iter().map(|s| s.patient_id.as_str()),
        va.iter().map(|s| s.patient_id.as_str()),
        std::iter::empty(),
    );
    let seed = derive_indexed(cfg.seed, "fold", fold as u64);
    let mut model = AcuityModel::build(spec, tr[0].window.len(), seed)?;
    let fold_cfg = TrainConfig { seed, ..cfg.clone() };
    let outcome = train(&mut model, &tr, &va, &fold_cfg)?;
    Ok((
        FoldReport {
            fold,
            best_epoch: outcome.best_epoch,
            best_val_auc: outcome.best_val_auc,
            val_auc: outcome.val_auc,
            train_loss: outcome.train_loss,
            n_train: tr.len(),
            n_val: va.len(),
        },
        model,
    ))
}

/// Runs every fold, up to `workers` at a time. Results are in fold order.
pub fn cross_validate(
    dev: &DevSet<LabeledSample>,
    spec: ModelSpec,
    cfg: &TrainConfig,
    workers: usize,
) -> Result<Vec<FoldReport>, EvalError> {
    let folds: Vec<usize> = (0..dev.n_folds()).collect();
    let mut results = Vec::with_capacity(folds.len());
    for group in folds.chunks(workers.max(1)) {
        let batch: Vec<Result<FoldReport, EvalError>> = std::thread::scope(|s| {
            let handles: Vec<_> = group
                .iter()
                .map(|&f| s.spawn(move || train_fold(dev, spec, cfg, f).map(|(r, _)| r)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("fold thread panicked")).collect()
        });
        results.extend(batch);
    }
    results.into_iter().collect()
}
