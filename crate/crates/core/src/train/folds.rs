use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, predict_all, TrainConfig, TrainError};
use crate::data::FeatureBundle;
use crate::eval::{evaluate, EvalRecord, MetricsReport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded stratified folds. Positives and then negatives are shuffled and
/// dealt round-robin, so fold sizes and per-fold positive counts each differ
/// by at most one. Ids keep bundle order inside each split.
pub fn stratified_folds(bundle: &FeatureBundle, k: usize, seed: u64) -> Result<Vec<FoldSplit>, TrainError> {
    let n = bundle.videos.len();
    if k < 2 || k > n {
        return Err(TrainError::Config(format!("{k} folds over {n} videos")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(11);
    let mut deck = Vec::with_capacity(n);
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..n).filter(|&i| bundle.videos[i].positive == class).collect();
        idx.shuffle(&mut rng);
        deck.extend(idx);
    }
    let mut fold_of = vec![0; n];
    for (pos, &i) in deck.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<_>, Vec<_>) = (0..n).partition(|&i| fold_of[i] == f);
            let ids = |v: Vec<usize>| v.into_iter().map(|i| bundle.videos[i].id.clone()).collect();
            FoldSplit {
                fold: f,
                train: ids(train),
                test: ids(test),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_videos: usize,
    pub test_videos: usize,
    pub selected_epoch: usize,
    pub ap: f64,
    pub mtta: f64,
    pub baseline_ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub dataset: String,
    pub config_hash: String,
    pub folds: Vec<FoldReport>,
    pub mean_ap: f64,
    pub mean_mtta: f64,
    #[serde(skip)]
    pub predictions: Vec<Vec<EvalRecord>>,
}

fn run_fold(bundle: &FeatureBundle, config: &TrainConfig, split: &FoldSplit) -> Result<(FoldReport, Vec<EvalRecord>), TrainError> {
    let test_ids: HashSet<&str> = split.test.iter().map(String::as_str).collect();
    if let Some(v) = split.train.iter().find(|id| test_ids.contains(id.as_str())) {
        return Err(TrainError::Leakage {
            fold: split.fold,
            video: v.clone(),
        });
    }
    let sub = |ids: &[String]| bundle.subset(ids).map_err(|e| TrainError::Config(e.to_string()));
    let train = sub(&split.train)?;
    let test = sub(&split.test)?;
    let out = fit(&train, config)?;
    let preds = predict_all(&out.model, &test)?;
    let report = evaluate(&preds, config.eval)?;
    Ok((
        FoldReport {
            fold: split.fold,
            train_videos: split.train.len(),
            test_videos: split.test.len(),
            selected_epoch: out.selected_epoch,
            ap: report.ap,
            mtta: report.mtta,
            baseline_ap: report.baseline_ap,
        },
        preds,
    ))
}

/// One fresh model per fold, folds trained in parallel.
pub fn kfold_run(bundle: &FeatureBundle, config: &TrainConfig) -> Result<CrossValReport, TrainError> {
    config.validate()?;
    config.check_dims(&bundle.manifest)?;
    let splits = stratified_folds(bundle, config.folds, config.seed)?;
    let results: Vec<_> = splits.par_iter().map(|s| run_fold(bundle, config, s)).collect();
    let mut folds = Vec::with_capacity(splits.len());
    let mut predictions = Vec::with_capacity(splits.len());
    for (split, r) in splits.iter().zip(results) {
        let (f, p) = r.map_err(|e| TrainError::Fold {
            fold: split.fold,
            source: Box::new(e),
        })?;
        folds.push(f);
        predictions.push(p);
    }
    let k = folds.len() as f64;
    Ok(CrossValReport {
        dataset: bundle.manifest.dataset.clone(),
        config_hash: config.hash(),
        mean_ap: folds.iter().map(|f| f.ap).sum::<f64>() / k,
        mean_mtta: folds.iter().map(|f| f.mtta).sum::<f64>() / k,
        folds,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDatasetReport {
    pub train_dataset: String,
    pub test_dataset: String,
    pub config_hash: String,
    pub selected_epoch: usize,
    pub ap: f64,
    pub mtta: f64,
    /// Baseline AP of the test set.
    pub baseline_ap: f64,
    pub metrics: MetricsReport,
    #[serde(skip)]
    pub predictions: Vec<EvalRecord>,
}

/// Trains on all of `train` and evaluates on all of `test`.
///
/// Feature dims must agree. Frame rates must agree unless one of the
/// manifests declares that it was resampled.
pub fn cross_dataset_run(train: &FeatureBundle, test: &FeatureBundle, config: &TrainConfig) -> Result<CrossDatasetReport, TrainError> {
    let (a, b) = (&train.manifest, &test.manifest);
    if (a.visual_dim, a.label_dim, a.global_dim) != (b.visual_dim, b.label_dim, b.global_dim) {
        return Err(TrainError::Incompatible(format!(
            "feature dims differ: {} has ({}, {}, {}), {} has ({}, {}, {})",
            a.dataset, a.visual_dim, a.label_dim, a.global_dim, b.dataset, b.visual_dim, b.label_dim, b.global_dim
        )));
    }
    if a.fps != b.fps && a.resampled_from_fps.is_none() && b.resampled_from_fps.is_none() {
        return Err(TrainError::Incompatible(format!(
            "{} runs at {} fps and {} at {} fps, and neither declares a resample",
            a.dataset, a.fps, b.dataset, b.fps
        )));
    }
    let out = fit(train, config)?;
    let predictions = predict_all(&out.model, test)?;
    let metrics = evaluate(&predictions, config.eval)?;
    Ok(CrossDatasetReport {
        train_dataset: a.dataset.clone(),
        test_dataset: b.dataset.clone(),
        config_hash: config.hash(),
        selected_epoch: out.selected_epoch,
        ap: metrics.ap,
        mtta: metrics.mtta,
        baseline_ap: metrics.baseline_ap,
        metrics,
        predictions,
    })
}
