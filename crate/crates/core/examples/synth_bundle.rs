//! Generates a synthetic bundle, writes it to disk, validates it and loads it back.

use stagnet::data::{load_bundle, synth_generate, validate_dir, write_bundle, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("stagnet_synth"));
    let config = SyntheticConfig { positives: 10, negatives: 10, ..SyntheticConfig::easy() }.with_seed(7);
    let bundle = synth_generate(&config)?;
    write_bundle(&dir, &bundle)?;

    let m = &bundle.manifest;
    println!(
        "{}: {} videos, {} frames at {} fps, {} slots, features {}/{}/{}",
        m.dataset,
        m.videos.len(),
        m.frames,
        m.fps,
        m.slots,
        m.visual_dim,
        m.label_dim,
        m.global_dim
    );

    let report = validate_dir(&dir)?;
    println!("validation: {} passed, {} failed", report.passed(), report.failed());

    let loaded = load_bundle(&dir)?;
    let v = &loaded.videos[0];
    println!("{}: positive {}, onset {:?}, first frame has {} slots", v.id, v.positive, v.onset, v.frames[0].slots.len());
    println!("written to {}", dir.display());
    Ok(())
}
