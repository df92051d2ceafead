//! Training, k-fold cross-validation and cross-dataset runs.

mod adam;
mod folds;

pub use adam::{Adam, StepOutcome};
pub use folds::{
    cross_dataset_run, kfold_run, stratified_folds, CrossDatasetReport, CrossValReport, FoldReport, FoldSplit,
};

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{FeatureBundle, Manifest};
use crate::eval::{average_precision, ApMode, EvalConfig, EvalError, EvalRecord};
use crate::model::{LabelMode, ModelConfig, ModelError, StagnetModel};
use crate::nn::{read_checkpoint, write_checkpoint, CheckpointError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}, step {step} (video {video})")]
    NonFiniteLoss { epoch: usize, step: u64, video: String },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error("fold {fold}: test video {video} is in the training split")]
    Leakage { fold: usize, video: String },
    #[error("incompatible datasets: {0}")]
    Incompatible(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Which parameters `fit` returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Epoch with the best validation AP.
    #[default]
    BestValidation,
    LastEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub folds: usize,
    /// Share of the training videos held out for model selection.
    pub validation_fraction: f64,
    pub selection: Selection,
    pub label_mode: LabelMode,
    pub model: ModelConfig,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 50,
            seed: 0,
            folds: 5,
            validation_fraction: 0.1,
            selection: Selection::BestValidation,
            label_mode: LabelMode::AllFrames,
            model: ModelConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(TrainError::Config(format!(
                "validation_fraction {} must lie in [0, 0.5)",
                self.validation_fraction
            )));
        }
        self.model.validate()?;
        Ok(())
    }

    /// Compact JSON with fields in declaration order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))
    }

    /// Hex SHA-256 of [`Self::to_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Copies the feature dimensions of a bundle into the model config.
    pub fn with_dims_of(mut self, m: &Manifest) -> Self {
        self.model.visual_dim = m.visual_dim;
        self.model.label_dim = m.label_dim;
        self.model.global_dim = m.global_dim;
        self
    }

    pub fn check_dims(&self, m: &Manifest) -> Result<(), TrainError> {
        let c = &self.model;
        let got = (m.visual_dim, m.label_dim, m.global_dim);
        let want = (c.visual_dim, c.label_dim, c.global_dim);
        if got != want {
            return Err(TrainError::Incompatible(format!(
                "dataset {} has (visual, label, global) dims {got:?}, config expects {want:?}",
                m.dataset
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Mean training loss over the epoch.
    pub loss: f64,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_ap: Option<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub skipped_steps: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: StagnetModel,
    pub log: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub selected_epoch: usize,
    pub validation_ids: Vec<String>,
}

/// Stratified holdout: about `fraction` of each class, chosen by `seed`.
pub fn validation_split(bundle: &FeatureBundle, fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let mut held = std::collections::HashSet::new();
    for class in [true, false] {
        let mut ids: Vec<&str> = bundle.videos.iter().filter(|v| v.positive == class).map(|v| v.id.as_str()).collect();
        ids.shuffle(&mut rng);
        let k = (fraction * ids.len() as f64).round() as usize;
        held.extend(ids[..k].iter().map(|s| s.to_string()));
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for v in &bundle.videos {
        if held.contains(&v.id) {
            val.push(v.id.clone());
        } else {
            train.push(v.id.clone());
        }
    }
    (train, val)
}

/// Predictions for every video, in bundle order.
pub fn predict_all(model: &StagnetModel, bundle: &FeatureBundle) -> Result<Vec<EvalRecord>, TrainError> {
    use rayon::prelude::*;
    bundle
        .videos
        .par_iter()
        .map(|v| model.predict(v).map_err(TrainError::from))
        .collect()
}

/// Trains one model on `bundle`. Parameters are initialized from
/// `config.seed`; the same seed, config and data give the same result.
pub fn fit(bundle: &FeatureBundle, config: &TrainConfig) -> Result<FitOutput, TrainError> {
    config.validate()?;
    if bundle.videos.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    config.check_dims(&bundle.manifest)?;

    let use_validation = config.selection == Selection::BestValidation && config.validation_fraction > 0.0;
    let (train_ids, val_ids) = if use_validation {
        validation_split(bundle, config.validation_fraction, config.seed)
    } else {
        (bundle.ids(), Vec::new())
    };
    let val_set = bundle.subset(&val_ids).map_err(|e| TrainError::Config(e.to_string()))?;
    let can_validate = val_set.videos.iter().any(|v| v.positive) && val_set.videos.iter().any(|v| !v.positive);
    if use_validation && !can_validate {
        log::warn!("validation split lacks one class; keeping the last epoch");
    }
    let train: Vec<&crate::data::VideoSample> = train_ids.iter().filter_map(|id| bundle.video(id)).collect();
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }

    let mut model = StagnetModel::new(config.model.clone(), config.seed)?;
    let mut opt = Adam::new(model.store.values(), config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(3);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, crate::nn::ParamStore)> = None;
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut skipped = 0;
        for &k in &order {
            let video = train[k];
            let (loss, grads) = model.loss_and_grads(video, config.label_mode)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step: opt.steps_taken() + 1,
                    video: video.id.clone(),
                });
            }
            total += loss;
            if opt.step(model.store.values_mut(), &grads) == StepOutcome::SkippedNonFinite {
                skipped += 1;
            }
        }
        let val_ap = if use_validation && can_validate {
            let preds = predict_all(&model, &val_set)?;
            Some(average_precision(&preds, ApMode::Frame)?)
        } else {
            None
        };
        if let Some(ap) = val_ap {
            if best.as_ref().is_none_or(|(b, _, _)| ap > *b) {
                best = Some((ap, epoch, model.store.clone()));
            }
        }
        let entry = EpochLog {
            epoch,
            step: opt.steps_taken(),
            loss: total / train.len() as f64,
            wall_ms: start.elapsed().as_millis() as u64,
            val_ap,
            skipped_steps: skipped,
        };
        log::info!("epoch {epoch}: loss {:.5} val_ap {:?}", entry.loss, entry.val_ap);
        log.push(entry);
    }

    let selected_epoch = match best {
        Some((_, epoch, store)) => {
            model.store = store;
            epoch
        }
        None => config.epochs,
    };
    Ok(FitOutput {
        model,
        log,
        selected_epoch,
        validation_ids: val_ids,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the epoch log as JSON lines.
pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<(), TrainError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for e in log {
        writeln!(w, "{}", serde_json::to_string(e).expect("log serializes")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn save_checkpoint(path: &Path, model: &StagnetModel, config: &TrainConfig) -> Result<(), TrainError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    write_checkpoint(&mut w, &model.store, &config.hash(), &config.to_json())?;
    w.flush().map_err(io_err(path))
}

/// Rebuilds the model stored in a checkpoint together with its config.
pub fn load_checkpoint(path: &Path) -> Result<(StagnetModel, TrainConfig), TrainError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let ckpt = read_checkpoint(&mut r)?;
    let config = TrainConfig::from_json(&ckpt.config_json)?;
    if config.hash() != ckpt.config_hash {
        return Err(TrainError::Config(format!(
            "{}: config hash {} does not match its embedded config",
            path.display(),
            ckpt.config_hash
        )));
    }
    let mut model = StagnetModel::new(config.model.clone(), config.seed)?;
    ckpt.load_into(&mut model.store)?;
    Ok((model, config))
}
