//! Trains on one domain and tests on a shifted one.

use stagnet::data::{synth_generate, SyntheticConfig};
use stagnet::train::{cross_dataset_run, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let shift: f64 = std::env::args().nth(1).map_or(Ok(1.0), |s| s.parse())?;
    let base = SyntheticConfig { positives: 60, negatives: 60, ..SyntheticConfig::easy() };
    let a = synth_generate(&SyntheticConfig { dataset: "domain_a".into(), seed: 100, ..base.clone() })?;
    let a_test = synth_generate(&SyntheticConfig { dataset: "domain_a".into(), seed: 200, ..base.clone() })?;
    let b = synth_generate(&SyntheticConfig { dataset: "domain_b".into(), seed: 300, domain_shift: shift, ..base })?;

    let mut config = TrainConfig { lr: 3e-3, epochs: 10, ..TrainConfig::default() }.with_dims_of(&a.manifest);
    config.model.slots = a.manifest.slots;

    let same = cross_dataset_run(&a, &a_test, &config)?;
    let cross = cross_dataset_run(&a, &b, &config)?;
    println!("A -> A: AP {:.4}, mTTA {:.3} s", same.ap, same.mtta);
    println!("A -> B (shift {shift}): AP {:.4}, mTTA {:.3} s, baseline {:.4}", cross.ap, cross.mtta, cross.baseline_ap);
    Ok(())
}
