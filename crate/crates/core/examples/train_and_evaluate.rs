//! Trains on one synthetic bundle, evaluates on a fresh one and round-trips the checkpoint.

use stagnet::data::{synth_generate, SyntheticConfig};
use stagnet::eval::evaluate;
use stagnet::train::{fit, load_checkpoint, predict_all, save_checkpoint, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = SyntheticConfig { positives: 40, negatives: 40, ..SyntheticConfig::easy() };
    let train = synth_generate(&base.clone().with_seed(1))?;
    let test = synth_generate(&base.with_seed(2))?;

    let mut config = TrainConfig { lr: 3e-3, epochs: 10, ..TrainConfig::default() }.with_dims_of(&train.manifest);
    config.model.slots = train.manifest.slots;
    let fitted = fit(&train, &config)?;
    for e in &fitted.log {
        println!("epoch {:>2}: loss {:.4}, validation AP {:?}", e.epoch, e.loss, e.val_ap);
    }
    println!("kept epoch {}", fitted.selected_epoch);

    let report = evaluate(&predict_all(&fitted.model, &test)?, config.eval)?;
    println!("test AP {:.4} (baseline {:.4}), mTTA {:.3} s", report.ap, report.baseline_ap, report.mtta);

    let path = std::env::temp_dir().join("stagnet_example.ckpt");
    save_checkpoint(&path, &fitted.model, &config)?;
    let (restored, _) = load_checkpoint(&path)?;
    let again = evaluate(&predict_all(&restored, &test)?, config.eval)?;
    println!("after reload AP {:.4}", again.ap);
    Ok(())
}
