//! AP, TTA and mTTA on a few hand-written prediction traces.

use stagnet::eval::{
    average_precision, baseline_ap, evaluate, mtta, pr_curve, scored_pool, tta, ApMode, EvalConfig, EvalRecord, MissPolicy,
};

fn record(id: &str, label: bool, onset: Option<u32>, probs: &[f64]) -> EvalRecord {
    EvalRecord { id: id.into(), fps: 10.0, label, onset, probs: probs.to_vec() }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let records = vec![
        record("early_alarm", true, Some(8), &[0.2, 0.4, 0.7, 0.8, 0.9, 0.9, 0.95, 0.97, 0.99, 0.99]),
        record("late_alarm", true, Some(8), &[0.1, 0.1, 0.2, 0.2, 0.3, 0.6, 0.7, 0.9, 0.95, 0.99]),
        record("quiet", false, None, &[0.1, 0.2, 0.1, 0.3, 0.2, 0.1, 0.2, 0.1, 0.2, 0.1]),
        record("false_alarm", false, None, &[0.1, 0.2, 0.4, 0.6, 0.7, 0.5, 0.3, 0.2, 0.1, 0.1]),
    ];

    for r in records.iter().filter(|r| r.label) {
        for alpha in [0.5, 0.8] {
            match tta(r, alpha)? {
                Some(t) => println!("{} TTA at {alpha}: {t:.1} s", r.id),
                None => println!("{} never crosses {alpha} before onset", r.id),
            }
        }
    }

    let pool = scored_pool(&records)?;
    println!("scored frames: {}", pool.len());
    for p in pr_curve(&pool)?.iter().take(5) {
        println!("  threshold {:.2}: precision {:.3} recall {:.3}", p.threshold, p.precision, p.recall);
    }
    println!("frame AP {:.4}", average_precision(&records, ApMode::Frame)?);
    println!("video AP {:.4}", average_precision(&records, ApMode::Video)?);
    println!("baseline AP {:.4}", baseline_ap(&records)?);
    let m = mtta(&records, MissPolicy::Exclude)?;
    println!("mTTA {:.3} s over {} thresholds", m.seconds, m.thresholds_used);

    let report = evaluate(&records, EvalConfig::default())?;
    println!("best-F1 threshold {:.3}, mTTA there {:.3} s", report.best_threshold, report.mtta_best_threshold);
    Ok(())
}
