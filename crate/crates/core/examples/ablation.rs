//! Full model against the no-LSTM and uniform-aggregation variants.

use stagnet::data::{synth_generate, SyntheticConfig};
use stagnet::nn::Aggregation;
use stagnet::train::{cross_dataset_run, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args().nth(1).map_or(Ok(2), |s| s.parse())?;
    println!("{:<6} {:>8} {:>8} {:>8}", "seed", "full", "no_lstm", "uniform");
    for seed in 0..seeds {
        let train = synth_generate(&SyntheticConfig::hard().with_seed(100 + seed))?;
        let test = synth_generate(&SyntheticConfig::hard().with_seed(200 + seed))?;
        let mut full = TrainConfig { lr: 3e-3, epochs: 10, seed, ..TrainConfig::default() }.with_dims_of(&train.manifest);
        full.model.slots = train.manifest.slots;
        let mut no_lstm = full.clone();
        no_lstm.model.use_lstm = false;
        let mut uniform = full.clone();
        uniform.model.aggregation = Aggregation::Uniform;

        let ap = |c: &TrainConfig| cross_dataset_run(&train, &test, c).map(|r| r.ap);
        println!("{seed:<6} {:>8.4} {:>8.4} {:>8.4}", ap(&full)?, ap(&no_lstm)?, ap(&uniform)?);
    }
    Ok(())
}
