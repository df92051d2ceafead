//! Finite-difference gradient suite over every layer and the full model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{synth_generate, SyntheticConfig, VideoSample};
use crate::graph::{GraphError, spatial_adjacency, temporal_adjacency, BoundingBox, ObjectRef, SpatialNorm};
use crate::model::{cross_entropy_loss, LabelMode, ModelConfig, ModelError, StagnetModel};
use crate::nn::{gatv2_forward, Aggregation, Bound, Coupling, EdgeList, GatLayer, Linear, Lstm, NnError, ParamStore};
use crate::tensor::{finite_difference_check, GradCheckError, Tape, Tensor, TensorError, Var};

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    GradCheck(#[from] GradCheckError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("synthetic input: {0}")]
    Data(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGradCheck {
    pub layer: String,
    pub seed: u64,
    /// Largest relative error over every checked tensor.
    pub max_rel_error: f64,
    /// Tensor holding the largest error.
    pub worst: String,
    pub coordinates: usize,
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("nonzero shape")
}

fn loss_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.5..1.5)).collect()
}

/// Checks the loss gradient for every tensor of `store`, one tensor at a time.
fn check_store<F>(layer: &str, seed: u64, store: &ParamStore, mut loss: F) -> Result<LayerGradCheck, DiagnosticsError>
where
    F: FnMut(&mut Tape, &Bound) -> Result<Var, ModelError>,
{
    let mut out = LayerGradCheck {
        layer: layer.into(),
        seed,
        max_rel_error: 0.0,
        worst: String::new(),
        coordinates: 0,
    };
    for id in store.ids() {
        let r = finite_difference_check(
            |tape, x| {
                let p = store.bind_one(tape, id, x)?;
                loss(tape, &p).map_err(|e| match e {
                    ModelError::Nn(NnError::Tensor(t)) => t,
                    other => panic!("{layer}: {other}"),
                })
            },
            store.get(id),
            FD_STEP,
        )?;
        out.coordinates += store.get(id).numel();
        if r.max_rel_error >= out.max_rel_error {
            out.max_rel_error = r.max_rel_error;
            out.worst = format!("{}[{}]", store.name(id), r.worst_index);
        }
    }
    Ok(out)
}

fn linear_check(seed: u64) -> Result<LayerGradCheck, DiagnosticsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layer = Linear::new(&mut store, "linear", 5, 3, &mut rng)?;
    *store.get_mut(layer.bias) = random_tensor(&mut rng, &[3], 0.5);
    let x = random_tensor(&mut rng, &[4, 5], 1.0);
    let w = loss_weights(&mut rng, 12);
    check_store("linear", seed, &store, |tape, p| {
        let xv = tape.constant(x.clone())?;
        let y = layer.forward(tape, p, xv)?;
        let y = tape.tanh(y)?;
        Ok(tape.weighted_sum(y, &w)?)
    })
}

fn random_boxes(rng: &mut ChaCha8Rng, n: usize) -> Vec<BoundingBox> {
    (0..n)
        .map(|_| BoundingBox::new(rng.random_range(0.0..4.0), rng.random_range(0.0..4.0), 1.0, 1.0))
        .collect()
}

fn gat_spatial_check(seed: u64) -> Result<LayerGradCheck, DiagnosticsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layer = GatLayer::new(&mut store, "gat", 4, 6, 2, 0.2, &mut rng)?;
    let a = spatial_adjacency(&random_boxes(&mut rng, 3), &[true; 3], SpatialNorm::Global)?;
    let h = random_tensor(&mut rng, &[3, 4], 1.0);
    let w = loss_weights(&mut rng, 18);
    check_store("gatv2_spatial", seed, &store, |tape, p| {
        let hv = tape.constant(h.clone())?;
        let y = gatv2_forward(tape, p, &layer, hv, &a, Coupling::LogWeight, Aggregation::Attention)?.out;
        Ok(tape.weighted_sum(y, &w)?)
    })
}

fn object_refs(fs: &[Vec<f64>]) -> Vec<ObjectRef<'_>> {
    fs.iter()
        .map(|f| ObjectRef {
            class_id: 0,
            feature: f,
            valid: true,
        })
        .collect()
}

fn gat_temporal_check(seed: u64) -> Result<LayerGradCheck, DiagnosticsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layer = GatLayer::new(&mut store, "gat", 4, 4, 1, 0.2, &mut rng)?;
    let curr: Vec<Vec<f64>> = (0..3).map(|_| random_tensor(&mut rng, &[4], 1.0).into_data()).collect();
    let prev: Vec<Vec<f64>> = curr.iter().map(|f| f.iter().map(|x| x + rng.random_range(-0.3..0.3)).collect()).collect();
    let (rc, rp) = (object_refs(&curr), object_refs(&prev));
    let a = temporal_adjacency(&rc, &rp)?;
    let edges = EdgeList::from_adjacency(&a, Coupling::LogWeight);
    let hc = Tensor::from_rows(&curr)?;
    let hp = Tensor::from_rows(&prev)?;
    let w = loss_weights(&mut rng, 12);
    check_store("gatv2_temporal", seed, &store, |tape, p| {
        let dst = tape.constant(hc.clone())?;
        let src = tape.constant(hp.clone())?;
        let y = layer.forward_edges(tape, p, dst, src, &edges, Aggregation::Attention)?.out;
        let y = tape.tanh(y)?;
        Ok(tape.weighted_sum(y, &w)?)
    })
}

fn lstm_check(seed: u64) -> Result<LayerGradCheck, DiagnosticsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "lstm", 3, 4, &mut rng)?;
    let seq = random_tensor(&mut rng, &[4, 3], 1.0);
    let w = loss_weights(&mut rng, 16);
    check_store("lstm", seed, &store, |tape, p| {
        let s = tape.constant(seq.clone())?;
        let y = lstm.forward(tape, p, s, None, None)?;
        Ok(tape.weighted_sum(y, &w)?)
    })
}

fn cross_entropy_check(seed: u64) -> Result<LayerGradCheck, DiagnosticsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let logits = store.add("logits", random_tensor(&mut rng, &[5, 2], 2.0))?;
    let positive = seed % 2 == 0;
    let onset = positive.then_some(4);
    check_store("cross_entropy", seed, &store, |tape, p| {
        cross_entropy_loss(tape, p.var(logits), positive, onset, LabelMode::BeforeOnset)
    })
}

/// Toy model config used by the end-to-end check.
pub fn toy_model_config(visual_dim: usize, label_dim: usize, global_dim: usize) -> ModelConfig {
    ModelConfig {
        visual_dim,
        label_dim,
        global_dim,
        slots: 2,
        visual_embed: 3,
        label_embed: 2,
        object_hidden: 4,
        global_hidden: 4,
        frame_hidden: 4,
        classifier_hidden: 4,
        window: 2,
        ..ModelConfig::default()
    }
}

/// A positive 3-frame video with two objects in every frame.
pub fn toy_video(seed: u64) -> Result<VideoSample, DiagnosticsError> {
    let cfg = SyntheticConfig {
        positives: 1,
        negatives: 0,
        frames: 3,
        slots: 2,
        visual_dim: 4,
        label_dim: 3,
        global_dim: 5,
        classes: 1,
        frame_width: 6.0,
        frame_height: 4.0,
        onset_window: (3, 3),
        miss_rate: 0.0,
        seed,
        ..SyntheticConfig::easy()
    };
    let b = synth_generate(&cfg).map_err(|e| DiagnosticsError::Data(e.to_string()))?;
    Ok(b.videos.into_iter().next().expect("one video"))
}

fn model_check(seed: u64) -> Result<LayerGradCheck, DiagnosticsError> {
    let video = toy_video(seed)?;
    let mut model = StagnetModel::new(toy_model_config(4, 3, 5), seed)?;
    // Zero-initialized biases put ReLU inputs exactly on the kink.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(5);
    for p in model.store.values_mut() {
        for x in p.data_mut() {
            *x += rng.random_range(-0.1..0.1);
        }
    }
    check_store("model_end_to_end", seed, &model.store, |tape, p| {
        let out = model.forward(tape, p, &video)?;
        cross_entropy_loss(tape, out.logits, video.positive, video.onset, LabelMode::AllFrames)
    })
}

/// Every layer check for one seed.
pub fn gradient_suite(seed: u64) -> Result<Vec<LayerGradCheck>, DiagnosticsError> {
    Ok(vec![
        linear_check(seed)?,
        gat_spatial_check(seed)?,
        gat_temporal_check(seed)?,
        lstm_check(seed)?,
        cross_entropy_check(seed)?,
        model_check(seed)?,
    ])
}
