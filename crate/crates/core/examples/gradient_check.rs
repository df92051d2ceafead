//! Finite-difference check of every layer and the full model over a few seeds.

use std::collections::BTreeMap;

use stagnet::diagnostics::gradient_suite;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args().nth(1).map_or(Ok(5), |s| s.parse())?;
    let mut worst: BTreeMap<String, (f64, String, u64)> = BTreeMap::new();
    for seed in 0..seeds {
        for check in gradient_suite(seed)? {
            let entry = worst.entry(check.layer.clone()).or_insert((0.0, String::new(), seed));
            if check.max_rel_error >= entry.0 {
                *entry = (check.max_rel_error, check.worst.clone(), seed);
            }
        }
    }
    println!("{:<16} {:>12}  {:<5} worst coordinate", "layer", "max rel err", "seed");
    for (layer, (err, at, seed)) in &worst {
        println!("{layer:<16} {err:>12.3e}  {seed:<5} {at}");
    }
    Ok(())
}
