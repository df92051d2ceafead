use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stagnet::data::{synth_generate, DetectionSlot, SyntheticConfig};
use stagnet::eval::{average_precision, pr_curve, ap_from_curve, tta, ApMode, Band, EvalRecord};
use stagnet::graph::{spatial_adjacency, temporal_adjacency, BoundingBox, ObjectRef, SpatialNorm};
use stagnet::model::{ModelConfig, StagnetModel};
use stagnet::nn::{gatv2_forward, Aggregation, Coupling, GatLayer, ParamStore};
use stagnet::tensor::{Tape, Tensor};
use stagnet::train::stratified_folds;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn boxes(max: usize) -> impl Strategy<Value = Vec<(f64, f64, bool)>> {
    prop::collection::vec((0.0f64..48.0, 0.0f64..27.0, prop::bool::weighted(0.8)), 1..=max).prop_map(|mut v| {
        v[0].2 = true;
        v
    })
}

fn refs<'a>(feats: &[(u32, Vec<f64>)], fs: &[&'a [f64]], range: std::ops::Range<usize>) -> Vec<ObjectRef<'a>> {
    range.map(|k| ObjectRef { class_id: feats[k].0, feature: fs[k], valid: true }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(x in (1usize..6, 1usize..5).prop_flat_map(|(r, c)| matrix(r, c)), shift in -50.0f64..50.0) {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone()).unwrap();
        let s = tape.softmax_rows(v).unwrap();
        let shifted = Tensor::new(x.shape().to_vec(), x.data().iter().map(|a| a + shift).collect()).unwrap();
        let w = tape.constant(shifted).unwrap();
        let s2 = tape.softmax_rows(w).unwrap();
        let (p, q) = (tape.value(s), tape.value(s2));
        for r in 0..p.rows() {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        prop_assert!(p.max_abs_diff(q) <= 1e-12);
    }

    #[test]
    fn spatial_weights_ignore_translation(b in boxes(12), dx in -20.0f64..20.0, dy in -20.0f64..20.0) {
        let base: Vec<BoundingBox> = b.iter().map(|(x, y, _)| BoundingBox::new(*x, *y, 1.0, 1.0)).collect();
        let moved: Vec<BoundingBox> = b.iter().map(|(x, y, _)| BoundingBox::new(x + dx, y + dy, 1.0, 1.0)).collect();
        let mask: Vec<bool> = b.iter().map(|t| t.2).collect();
        for norm in [SpatialNorm::Global, SpatialNorm::RowWise] {
            let a = spatial_adjacency(&base, &mask, norm).unwrap();
            let c = spatial_adjacency(&moved, &mask, norm).unwrap();
            for (u, v) in a.weights().iter().zip(c.weights()) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn temporal_weights_ignore_feature_scale(
        feats in prop::collection::vec((0u32..2, prop::collection::vec(-1.0f64..1.0, 4)), 2..10),
        scale in 0.01f64..100.0,
    ) {
        let half = feats.len() / 2;
        let scaled: Vec<Vec<f64>> = feats.iter().map(|(_, f)| f.iter().map(|x| x * scale).collect()).collect();
        let plain: Vec<&[f64]> = feats.iter().map(|(_, f)| f.as_slice()).collect();
        let big: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
        let a = temporal_adjacency(&refs(&feats, &plain, 0..half), &refs(&feats, &plain, half..feats.len())).unwrap();
        let c = temporal_adjacency(&refs(&feats, &big, 0..half), &refs(&feats, &big, half..feats.len())).unwrap();
        for (u, v) in a.weights().iter().zip(c.weights()) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn gat_is_permutation_equivariant_and_attention_normalized(b in boxes(8), seed in 0u64..1000, heads in 1usize..3) {
        let n = b.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layer = GatLayer::new(&mut store, "gat", 3, 2 * heads, heads, 0.2, &mut rng).unwrap();
        let h = Tensor::matrix(n, 3, (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let boxes: Vec<BoundingBox> = b.iter().map(|(x, y, _)| BoundingBox::new(*x, *y, 1.0, 1.0)).collect();
        let mask: Vec<bool> = b.iter().map(|t| t.2).collect();
        let a = spatial_adjacency(&boxes, &mask, SpatialNorm::Global).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let hp = Tensor::from_rows(&perm.iter().map(|&i| h.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let ap = a.permuted(&perm);

        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape).unwrap();
        let x = tape.constant(h).unwrap();
        let out = gatv2_forward(&mut tape, &p, &layer, x, &a, Coupling::LogWeight, Aggregation::Attention).unwrap();
        let xp = tape.constant(hp).unwrap();
        let outp = gatv2_forward(&mut tape, &p, &layer, xp, &ap, Coupling::LogWeight, Aggregation::Attention).unwrap();
        let (y, yp) = (tape.value(out.out), tape.value(outp.out));
        for (k, &i) in perm.iter().enumerate() {
            for c in 0..y.cols() {
                prop_assert!((yp.at(k, c) - y.at(i, c)).abs() <= 1e-10);
            }
        }

        let edges = stagnet::nn::EdgeList::from_adjacency(&a, Coupling::LogWeight);
        for att in &out.attention {
            let w = tape.value(*att);
            let mut sums = vec![0.0; n];
            for (e, t) in edges.targets.iter().enumerate() {
                sums[*t] += w.data()[e];
            }
            for (i, s) in sums.iter().enumerate() {
                let want = if mask[i] { 1.0 } else { 0.0 };
                prop_assert!((s - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn padding_slots_change_nothing(seed in 0u64..500, extra in 1usize..4) {
        let cfg = SyntheticConfig { positives: 1, negatives: 1, frames: 5, slots: 3, visual_dim: 4, label_dim: 3, global_dim: 5,
            onset_window: (3, 5), seed, ..SyntheticConfig::easy() };
        let video = synth_generate(&cfg).unwrap().videos[(seed % 2) as usize].clone();
        let model_cfg = ModelConfig { visual_dim: 4, label_dim: 3, global_dim: 5, slots: 3 + extra, window: 3, ..ModelConfig::default() };
        let model = StagnetModel::new(model_cfg, seed).unwrap();
        let mut padded = video.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for f in &mut padded.frames {
            for _ in 0..extra {
                let at = rng.random_range(0..=f.slots.len());
                f.slots.insert(at, DetectionSlot::empty(4, 3));
            }
        }
        let p = model.predict(&video).unwrap().probs;
        let q = model.predict(&padded).unwrap().probs;
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn folds_are_stratified(pos in 1usize..25, neg in 1usize..25, k in 2usize..6, seed in 0u64..1000) {
        prop_assume!(k <= pos + neg);
        let cfg = SyntheticConfig { positives: pos, negatives: neg, frames: 3, slots: 2, visual_dim: 2, label_dim: 2, global_dim: 2,
            onset_window: (2, 3), seed, ..SyntheticConfig::easy() };
        let bundle = synth_generate(&cfg).unwrap();
        let folds = stratified_folds(&bundle, k, seed).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        let positives: Vec<usize> = folds
            .iter()
            .map(|f| f.test.iter().filter(|id| bundle.video(id).unwrap().positive).count())
            .collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert!(positives.iter().max().unwrap() - positives.iter().min().unwrap() <= 1);
        let mut all: Vec<&String> = folds.iter().flat_map(|f| &f.test).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), pos + neg);
        for f in &folds {
            prop_assert!(f.train.iter().all(|id| !f.test.contains(id)));
            prop_assert_eq!(f.train.len() + f.test.len(), pos + neg);
        }
    }

    #[test]
    fn tta_never_grows_with_threshold(probs in prop::collection::vec(0.0f64..=1.0, 2..30), a_frac in 0.0f64..1.0, mut alphas in prop::collection::vec(0.0f64..1.0, 2..8)) {
        let onset = 1 + (a_frac * (probs.len() - 1) as f64) as u32;
        let r = EvalRecord { id: "v".into(), fps: 10.0, label: true, onset: Some(onset), probs };
        alphas.sort_by(f64::total_cmp);
        let mut last = f64::INFINITY;
        for a in alphas {
            let t = tta(&r, a).unwrap().unwrap_or(0.0);
            prop_assert!(t <= last);
            last = t;
        }
    }

    #[test]
    fn ap_is_a_rank_statistic(scores in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..40)) {
        prop_assume!(scores.iter().any(|s| s.1) && scores.iter().any(|s| !s.1));
        let records: Vec<EvalRecord> = scores
            .iter()
            .enumerate()
            .map(|(k, (p, l))| EvalRecord { id: format!("v{k}"), fps: 10.0, label: *l, onset: l.then_some(2), probs: vec![*p, 0.0] })
            .collect();
        let warped: Vec<EvalRecord> = records
            .iter()
            .map(|r| EvalRecord { probs: r.probs.iter().map(|p| p.sqrt() * 0.5 + 0.25).collect(), ..r.clone() })
            .collect();
        let a = average_precision(&records, ApMode::Frame).unwrap();
        let b = average_precision(&warped, ApMode::Frame).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn random_scores_on_a_balanced_pool_sit_near_the_positive_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let labels: Vec<bool> = (0..100).map(|k| k % 2 == 0).collect();
    let aps: Vec<f64> = (0..200)
        .map(|_| {
            let pool: Vec<(f64, bool)> = labels.iter().map(|l| (rng.random::<f64>(), *l)).collect();
            ap_from_curve(&pr_curve(&pool).unwrap())
        })
        .collect();
    let band = Band::from_samples(&aps);
    assert!(band.contains(0.5, 3.0), "mean {} sd {}", band.mean, band.sd);
    let outside = aps.iter().filter(|a| (*a - 0.5).abs() > 3.0 * band.sd).count();
    assert!(outside <= 4, "{outside} of 200 trials outside 3σ");
}

/// Logistic regression on the last frame's global features separates the
/// synthetic classes, so the data carry a learnable signal.
#[test]
fn last_frame_global_features_are_linearly_separable() {
    let train = synth_generate(&SyntheticConfig::easy().with_seed(1)).unwrap();
    let test = synth_generate(&SyntheticConfig::easy().with_seed(2)).unwrap();
    let features = |b: &stagnet::data::FeatureBundle| -> Vec<(Vec<f64>, bool)> {
        b.videos
            .iter()
            .map(|v| (v.frames.last().unwrap().global.iter().map(|x| *x as f64).collect(), v.positive))
            .collect()
    };
    let data = features(&train);
    let d = data[0].0.len();
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    for _ in 0..300 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, y) in &data {
            let z: f64 = x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            let err = 1.0 / (1.0 + (-z).exp()) - if *y { 1.0 } else { 0.0 };
            gw.iter_mut().zip(x).for_each(|(g, xi)| *g += err * xi);
            gb += err;
        }
        let n = data.len() as f64;
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= 0.1 * g / n);
        b -= 0.1 * gb / n;
    }
    let pool: Vec<(f64, bool)> = features(&test)
        .into_iter()
        .map(|(x, y)| (x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b, y))
        .collect();
    let ap = ap_from_curve(&pr_curve(&pool).unwrap());
    assert!(ap > 0.9, "probe AP {ap}");
}
