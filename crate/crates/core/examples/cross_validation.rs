//! Stratified k-fold training and evaluation on one bundle.

use stagnet::data::{synth_generate, SyntheticConfig};
use stagnet::train::{kfold_run, stratified_folds, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bundle = synth_generate(&SyntheticConfig { positives: 30, negatives: 30, ..SyntheticConfig::easy() })?;
    let mut config = TrainConfig { lr: 3e-3, epochs: 8, folds: 3, ..TrainConfig::default() }.with_dims_of(&bundle.manifest);
    config.model.slots = bundle.manifest.slots;

    for split in stratified_folds(&bundle, config.folds, config.seed)? {
        let positives = split.test.iter().filter(|id| bundle.video(id).is_some_and(|v| v.positive)).count();
        println!("fold {}: {} train, {} test ({} positive)", split.fold, split.train.len(), split.test.len(), positives);
    }

    let report = kfold_run(&bundle, &config)?;
    for f in &report.folds {
        println!("fold {}: AP {:.4}, mTTA {:.3} s, epoch {}", f.fold, f.ap, f.mtta, f.selected_epoch);
    }
    println!("mean AP {:.4}, mean mTTA {:.3} s", report.mean_ap, report.mean_mtta);
    Ok(())
}
