//! Fold orchestration: batching with augmentation, the optimizer loop, early
//! stopping on validation loss and best-epoch snapshots.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_window, AugmentConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::model::checkpoint::{load_checkpoint, transplant_extractor};
use crate::model::config::ModelConfig;
use crate::model::network::{backward_pass, forward_pass, update_running_stats, Mode, PassOptions};
use crate::model::params::{init_params, ModelParams};
use crate::preprocess::normalize_votes;
use crate::rng;
use crate::signal::{validate_dataset, Dataset};
use crate::train::kfold::{patient_kfold, FoldAssignment};
use crate::train::loss::{cross_entropy_loss, kl_div_loss, loss_and_grad, LossKind};
use crate::train::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub k_folds: usize,
    pub seed: u64,
    pub freeze_extractor: bool,
    pub augment: AugmentConfig,
    /// Folds trained concurrently. Results do not depend on it.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::KlSoft,
            max_epochs: 20,
            early_stop_patience: 2,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            k_folds: 5,
            seed: 0,
            freeze_extractor: false,
            augment: AugmentConfig::default(),
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(Error::Config(format!("k_folds must be >= 2, got {}", self.k_folds)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("optimizer decay rates must lie in [0, 1) and epsilon be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_micro_tpr: Vec<f64>,
    pub epochs_run: usize,
    /// Zero-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation metrics of the kept weights.
    pub report: EvalReport,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub folds: Vec<FoldRecord>,
    pub total_epochs: usize,
    pub mean_micro_tpr: f64,
}

impl RunRecord {
    pub fn min_micro_tpr(&self) -> f64 {
        self.folds.iter().map(|f| f.report.micro_tpr).fold(f64::INFINITY, f64::min)
    }
}

/// A finished run: the record plus the kept weights of every fold.
pub struct TrainedRun {
    pub record: RunRecord,
    pub models: Vec<ModelParams<f32>>,
}

impl TrainedRun {
    /// Writes `fold{i}.ckpt` and `record.json` into `dir`, filling in the
    /// checkpoint paths of the record.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, m) in self.models.iter().enumerate() {
            let path = dir.join(format!("fold{i}.ckpt"));
            crate::model::save_checkpoint(m, &path)?;
            self.record.folds[i].checkpoint = Some(path.display().to_string());
        }
        let path = dir.join("record.json");
        let json = serde_json::to_string_pretty(&self.record)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

fn check_dataset(dataset: &Dataset, model: &ModelConfig) -> Result<()> {
    if let Some(v) = validate_dataset(dataset).into_iter().next() {
        return Err(Error::Validation {
            id: v.segment_id,
            reason: v.rule,
        });
    }
    if let Some(seg) = dataset.segments.iter().find(|s| s.total_votes() == 0) {
        return Err(Error::Unlabeled(seg.id.clone()));
    }
    if dataset.n_channels() != model.n_channels {
        return Err(Error::Shape(format!(
            "dataset has {} channels, model expects {}",
            dataset.n_channels(),
            model.n_channels
        )));
    }
    if dataset.n_classes() != model.n_classes {
        return Err(Error::Shape(format!(
            "dataset has {} classes, model expects {}",
            dataset.n_classes(),
            model.n_classes
        )));
    }
    model.check_window(dataset.window_samples)
}

/// Flat `[b × n_classes]` training targets.
fn targets(dataset: &Dataset, idx: &[usize], kind: LossKind) -> Result<Vec<f64>> {
    let n = dataset.n_classes();
    let mut out = vec![0.0; idx.len() * n];
    for (row, &i) in idx.iter().enumerate() {
        let seg = &dataset.segments[i];
        let dst = &mut out[row * n..][..n];
        match kind {
            LossKind::KlSoft => dst.copy_from_slice(&normalize_votes(&seg.votes)?.probs),
            LossKind::CrossEntropy => {
                dst[seg.hard_label().ok_or_else(|| Error::Unlabeled(seg.id.clone()))?] = 1.0
            }
        }
    }
    Ok(out)
}

fn validation_loss(kind: LossKind, dataset: &Dataset, idx: &[usize], logits: &Array2<f64>) -> Result<f64> {
    match kind {
        LossKind::KlSoft => {
            let t = idx
                .iter()
                .map(|&i| normalize_votes(&dataset.segments[i].votes))
                .collect::<Result<Vec<_>>>()?;
            kl_div_loss(&t, logits)
        }
        LossKind::CrossEntropy => cross_entropy_loss(&metrics::hard_labels(dataset, idx)?, logits),
    }
}

struct FoldJob<'a> {
    fold: usize,
    train: Vec<usize>,
    val: Vec<usize>,
    dataset: &'a Dataset,
    cfg: &'a TrainConfig,
    augment: &'a AugmentConfig,
}

fn run_fold(job: FoldJob<'_>, mut params: ModelParams<f32>) -> Result<(FoldRecord, ModelParams<f32>)> {
    let FoldJob {
        fold,
        train,
        val,
        dataset,
        cfg,
        augment,
    } = job;
    if cfg.freeze_extractor {
        params.freeze_extractor();
    }
    let frozen = params.extractor_frozen();
    let mode = if frozen { Mode::Eval } else { Mode::Train };
    let (c, t) = (dataset.n_channels(), dataset.window_samples);
    let n_classes = dataset.n_classes();
    let fold_seed = rng::derive_idx(cfg.seed, "fold", fold as u64);
    let mut adam = Adam::new(cfg.adam());

    let mut train_loss = Vec::new();
    let mut val_loss = Vec::new();
    let mut val_tpr = Vec::new();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut since_best = 0;
    let mut step: u64 = 0;

    for epoch in 0..cfg.max_epochs {
        let mut order = train.clone();
        order.shuffle(&mut rng::seeded(rng::derive_idx(fold_seed, "shuffle", epoch as u64)));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut x = Vec::with_capacity(batch.len() * c * t);
            for &i in batch {
                let seg = &dataset.segments[i];
                if augment.any_enabled() {
                    let mut r = rng::seeded(rng::derive_idx(fold_seed, "augment", step * 1_000_003 + i as u64));
                    x.extend(augment_window(&seg.data, augment, &mut r)?.iter().copied());
                } else {
                    x.extend(seg.data.iter().copied());
                }
            }
            let opts = PassOptions {
                extractor_mode: mode,
                dropout_seed: Some(rng::derive_idx(fold_seed, "dropout", step)),
            };
            let diverged = |detail: String| Error::Diverged { fold, epoch, detail };
            let pass = forward_pass(&params, &x, batch.len(), c, t, opts).map_err(|e| match e {
                Error::NonFinite(what) => diverged(format!("non-finite {what}")),
                other => other,
            })?;
            let y = targets(dataset, batch, cfg.loss)?;
            let (loss, dlogits) = loss_and_grad(cfg.loss, &y, &pass.logits, n_classes)
                .map_err(|e| diverged(e.to_string()))?;
            if !loss.is_finite() {
                return Err(diverged(format!("loss {loss}")));
            }
            let grads = backward_pass(&params, &pass, &dlogits);
            adam.step(&mut params, &grads);
            if !frozen {
                update_running_stats(&mut params, &pass.norm_stats);
            }
            epoch_loss += loss * batch.len() as f64;
            step += 1;
        }
        train_loss.push(epoch_loss / train.len().max(1) as f64);

        let logits = metrics::predict_logits(&params, dataset, &val)?;
        let vl = validation_loss(cfg.loss, dataset, &val, &logits)?;
        let labels = metrics::hard_labels(dataset, &val)?;
        let correct = logits
            .rows()
            .into_iter()
            .zip(&labels)
            .filter(|(r, &y)| metrics::argmax(&r.to_vec()) == y)
            .count();
        val_loss.push(vl);
        val_tpr.push(correct as f64 / val.len().max(1) as f64);

        if vl < best.0 {
            best = (vl, epoch, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }

    let (best_val_loss, best_epoch, best_params) = best;
    let probs = metrics::logits_to_probs(&metrics::predict_logits(&best_params, dataset, &val)?);
    let labels = metrics::hard_labels(dataset, &val)?;
    let report = metrics::report_from_probs(&probs, &labels, &dataset.class_names)?;
    Ok((
        FoldRecord {
            fold,
            n_train: train.len(),
            n_val: val.len(),
            epochs_run: train_loss.len(),
            train_loss,
            val_loss,
            val_micro_tpr: val_tpr,
            best_epoch,
            best_val_loss,
            report,
            checkpoint: None,
        },
        best_params,
    ))
}

/// Trains one model per fold, each starting from `init(fold)`.
pub fn run_folds(
    dataset: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
    init: impl Fn(usize) -> Result<ModelParams<f32>> + Sync,
) -> Result<TrainedRun> {
    cfg.validate()?;
    model.validate()?;
    check_dataset(dataset, model)?;
    let augment = cfg.augment.resolve(dataset.n_channels(), dataset.window_samples);
    augment.validate(dataset.n_channels(), dataset.window_samples)?;
    let folds: FoldAssignment = patient_kfold(dataset, cfg.k_folds, cfg.seed)?;

    let job = |f: usize| -> Result<(FoldRecord, ModelParams<f32>)> {
        let (train, val) = folds.split(dataset, f);
        let job = FoldJob {
            fold: f,
            train,
            val,
            dataset,
            cfg,
            augment: &augment,
        };
        run_fold(job, init(f)?)
    };

    let jobs = cfg.jobs.max(1);
    let mut results = Vec::with_capacity(cfg.k_folds);
    let all: Vec<usize> = (0..cfg.k_folds).collect();
    for group in all.chunks(jobs) {
        if group.len() == 1 {
            results.push(job(group[0])?);
            continue;
        }
        let out: Vec<Result<_>> = std::thread::scope(|s| {
            let handles: Vec<_> = group.iter().map(|&f| s.spawn(move || job(f))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fold worker panicked"))
                .collect()
        });
        for r in out {
            results.push(r?);
        }
    }

    let (folds, models): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let total_epochs = folds.iter().map(|f: &FoldRecord| f.epochs_run).sum();
    let mean_micro_tpr = folds.iter().map(|f| f.report.micro_tpr).sum::<f64>() / folds.len() as f64;
    Ok(TrainedRun {
        record: RunRecord {
            seed: cfg.seed,
            model: model.clone(),
            train: cfg.clone(),
            folds,
            total_epochs,
            mean_micro_tpr,
        },
        models,
    })
}

/// K-fold training from freshly initialized weights.
pub fn train_model(dataset: &Dataset, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainedRun> {
    run_folds(dataset, model, cfg, |f| {
        init_params(model, rng::derive_idx(cfg.seed, "init", f as u64))
    })
}

/// Head-only fine-tune: the extractor comes from `checkpoint` and stays
/// frozen; only a fresh classifier for `model` is trained.
pub fn transfer_head(checkpoint: &Path, dataset: &Dataset, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainedRun> {
    let source = load_checkpoint(checkpoint)?;
    transfer_from(&source, dataset, model, cfg)
}

/// [`transfer_head`] with an in-memory source model.
pub fn transfer_from(
    source: &ModelParams<f32>,
    dataset: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainedRun> {
    // Surface architecture and fingerprint errors before any data checks.
    transplant_extractor(source, model, 0)?;
    let cfg = TrainConfig {
        freeze_extractor: true,
        ..cfg.clone()
    };
    run_folds(dataset, model, &cfg, |f| {
        transplant_extractor(source, model, rng::derive_idx(cfg.seed, "init", f as u64))
    })
}
