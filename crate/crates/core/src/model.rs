//! The end-to-end predictor: object graph branch, global LSTM branch and
//! the causal frame-graph head.
//!
//! Objects of every frame are stacked into one node set. Spatial edges stay
//! inside a frame; temporal edges run from frame `t − u` to frame `t`. The
//! per-frame object embeddings and the global sequence then pass through two
//! GATs over the frame graph, whose outputs are concatenated and classified.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::VideoSample;
use crate::graph::{frame_adjacency, spatial_adjacency, temporal_adjacency, BoundingBox, GraphError, ObjectRef, SpatialNorm};
use crate::nn::{Aggregation, Bound, Coupling, EdgeList, GatLayer, Linear, Lstm, NnError, ParamStore};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("video {video}: {reason}")]
    Input { video: String, reason: String },
    #[error("invalid model configuration: {0}")]
    Config(String),
}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Nn(NnError::Tensor(e))
    }
}

/// Which frames of a positive video count as accident frames in the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Every frame of a positive video is an accident frame.
    #[default]
    AllFrames,
    /// Frames before the onset are accident frames; the rest are left out.
    BeforeOnset,
}

/// How object embeddings of one frame become a single frame vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Object visual feature size (d₁).
    pub visual_dim: usize,
    /// Label embedding size (d₂).
    pub label_dim: usize,
    /// Global frame feature size (h).
    pub global_dim: usize,
    /// Object slots per frame that the model reads (S).
    pub slots: usize,
    pub visual_embed: usize,
    pub label_embed: usize,
    /// Output size of each object-level GAT.
    pub object_hidden: usize,
    /// φ_fr output size, also the LSTM hidden size.
    pub global_hidden: usize,
    /// Output size of each frame-level GAT.
    pub frame_hidden: usize,
    pub classifier_hidden: usize,
    pub heads: usize,
    pub leaky_slope: f64,
    /// Frame-graph window (k).
    pub window: usize,
    /// Temporal lag between linked object frames (u).
    pub lag: usize,
    pub spatial_norm: SpatialNorm,
    pub coupling: Coupling,
    pub aggregation: Aggregation,
    pub use_lstm: bool,
    pub pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            visual_dim: 16,
            label_dim: 8,
            global_dim: 16,
            slots: 19,
            visual_embed: 8,
            label_embed: 4,
            object_hidden: 8,
            global_hidden: 16,
            frame_hidden: 16,
            classifier_hidden: 16,
            heads: 1,
            leaky_slope: 0.2,
            window: 20,
            lag: 1,
            spatial_norm: SpatialNorm::Global,
            coupling: Coupling::LogWeight,
            aggregation: Aggregation::Attention,
            use_lstm: true,
            pooling: Pooling::Mean,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("visual_dim", self.visual_dim),
            ("label_dim", self.label_dim),
            ("global_dim", self.global_dim),
            ("slots", self.slots),
            ("visual_embed", self.visual_embed),
            ("label_embed", self.label_embed),
            ("object_hidden", self.object_hidden),
            ("global_hidden", self.global_hidden),
            ("frame_hidden", self.frame_hidden),
            ("classifier_hidden", self.classifier_hidden),
            ("heads", self.heads),
            ("window", self.window),
            ("lag", self.lag),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(ModelError::Config(format!("leaky_slope {} must be nonnegative", self.leaky_slope)));
        }
        for (name, v) in [
            ("object_hidden", self.object_hidden),
            ("frame_hidden", self.frame_hidden),
        ] {
            if v % self.heads != 0 {
                return Err(ModelError::Config(format!("{name} {v} is not divisible by {} heads", self.heads)));
            }
        }
        Ok(())
    }

    /// Width of one pooled frame vector from the object branch.
    pub fn object_out(&self) -> usize {
        2 * self.object_hidden
    }
}

/// Per-frame accident probabilities for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSeries {
    pub id: String,
    pub fps: f64,
    pub label: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset: Option<u32>,
    pub probs: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `N × 2·object_hidden`
    pub objects: Var,
    /// `N × global_hidden`
    pub global: Var,
    /// `N × 2`
    pub logits: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagnetModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    phi_e: Linear,
    phi_l: Linear,
    spatial: GatLayer,
    temporal: GatLayer,
    phi_fr: Linear,
    lstm: Lstm,
    frame_objects: GatLayer,
    frame_global: GatLayer,
    head_hidden: Linear,
    head_out: Linear,
}

/// Index of each valid object node, per frame and slot.
struct ObjectNodes {
    frame_of: Vec<usize>,
    slot_node: Vec<Vec<Option<usize>>>,
}

impl StagnetModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let node_dim = c.visual_embed + c.label_embed;
        let phi_e = Linear::new(&mut store, "phi_e", c.visual_dim, c.visual_embed, &mut rng)?;
        let phi_l = Linear::new(&mut store, "phi_l", c.label_dim, c.label_embed, &mut rng)?;
        let spatial = GatLayer::new(&mut store, "gat_spatial", node_dim, c.object_hidden, c.heads, c.leaky_slope, &mut rng)?;
        let temporal = GatLayer::new(&mut store, "gat_temporal", node_dim, c.object_hidden, c.heads, c.leaky_slope, &mut rng)?;
        let phi_fr = Linear::new(&mut store, "phi_fr", c.global_dim, c.global_hidden, &mut rng)?;
        let lstm = Lstm::new(&mut store, "lstm", c.global_hidden, c.global_hidden, &mut rng)?;
        let frame_objects = GatLayer::new(&mut store, "gat_frame_obj", c.object_out(), c.frame_hidden, c.heads, c.leaky_slope, &mut rng)?;
        let frame_global = GatLayer::new(&mut store, "gat_frame_fr", c.global_hidden, c.frame_hidden, c.heads, c.leaky_slope, &mut rng)?;
        let head_hidden = Linear::new(&mut store, "head.fc1", 2 * c.frame_hidden, c.classifier_hidden, &mut rng)?;
        let head_out = Linear::new(&mut store, "head.fc2", c.classifier_hidden, 2, &mut rng)?;
        Ok(Self {
            config,
            store,
            phi_e,
            phi_l,
            spatial,
            temporal,
            phi_fr,
            lstm,
            frame_objects,
            frame_global,
            head_hidden,
            head_out,
        })
    }

    pub fn phi_e(&self) -> &Linear {
        &self.phi_e
    }

    pub fn phi_l(&self) -> &Linear {
        &self.phi_l
    }

    pub fn phi_fr(&self) -> &Linear {
        &self.phi_fr
    }

    pub fn lstm(&self) -> &Lstm {
        &self.lstm
    }

    pub fn head_out(&self) -> &Linear {
        &self.head_out
    }

    /// Rejects videos whose shapes disagree with the configuration.
    pub fn check_video(&self, video: &VideoSample) -> Result<(), ModelError> {
        let c = &self.config;
        let bad = |reason: String| {
            Err(ModelError::Input {
                video: video.id.clone(),
                reason,
            })
        };
        if video.frames.is_empty() {
            return bad("no frames".into());
        }
        for (t, f) in video.frames.iter().enumerate() {
            if f.global.len() != c.global_dim {
                return bad(format!("frame {}: global dim {} != {}", t + 1, f.global.len(), c.global_dim));
            }
            for s in f.slots.iter().take(c.slots).filter(|s| s.valid) {
                if s.visual.len() != c.visual_dim || s.label.len() != c.label_dim {
                    return bad(format!(
                        "frame {}: object dims ({}, {}) != ({}, {})",
                        t + 1,
                        s.visual.len(),
                        s.label.len(),
                        c.visual_dim,
                        c.label_dim
                    ));
                }
            }
        }
        Ok(())
    }

    fn object_nodes(&self, video: &VideoSample) -> ObjectNodes {
        let mut frame_of = Vec::new();
        let slot_node = video
            .frames
            .iter()
            .enumerate()
            .map(|(t, f)| {
                f.slots
                    .iter()
                    .take(self.config.slots)
                    .map(|s| {
                        s.valid.then(|| {
                            frame_of.push(t);
                            frame_of.len() - 1
                        })
                    })
                    .collect()
            })
            .collect();
        ObjectNodes { frame_of, slot_node }
    }

    fn object_edges(&self, video: &VideoSample, nodes: &ObjectNodes) -> Result<(EdgeList, EdgeList), ModelError> {
        let c = &self.config;
        let mut spatial = EdgeList::new();
        let mut temporal = EdgeList::new();
        let feats: Vec<Vec<Vec<f64>>> = video
            .frames
            .iter()
            .map(|f| f.slots.iter().take(c.slots).map(|s| s.visual.iter().map(|x| *x as f64).collect()).collect())
            .collect();
        for (t, f) in video.frames.iter().enumerate() {
            let slots = &f.slots[..f.slots.len().min(c.slots)];
            let map = &nodes.slot_node[t];
            let boxes: Vec<BoundingBox> = slots.iter().map(|s| s.bbox).collect();
            let mask: Vec<bool> = slots.iter().map(|s| s.valid).collect();
            match spatial_adjacency(&boxes, &mask, c.spatial_norm) {
                Ok(a) => {
                    for i in 0..a.rows() {
                        for j in 0..a.cols() {
                            if let (Some(ni), Some(nj)) = (map[i], map[j]) {
                                spatial.push(ni, nj, a.get(i, j), c.coupling);
                            }
                        }
                    }
                }
                Err(GraphError::EmptyGraph) => {
                    log::debug!("video {}: frame {} has no detections", video.id, t + 1);
                    continue;
                }
                Err(e) => return Err(e.into()),
            }
            if t < c.lag {
                continue;
            }
            let p = t - c.lag;
            let refs = |k: usize| -> Vec<ObjectRef<'_>> {
                let slots = &video.frames[k].slots;
                (0..slots.len().min(c.slots))
                    .map(|s| ObjectRef {
                        class_id: slots[s].class_id,
                        feature: &feats[k][s],
                        valid: slots[s].valid,
                    })
                    .collect()
            };
            let a = temporal_adjacency(&refs(t), &refs(p))?;
            for i in 0..a.rows() {
                for j in 0..a.cols() {
                    if let (Some(ni), Some(nj)) = (map[i], nodes.slot_node[p][j]) {
                        temporal.push(ni, nj, a.get(i, j), c.coupling);
                    }
                }
            }
        }
        Ok((spatial, temporal))
    }

    /// Per-frame object embeddings, `N × 2·object_hidden`. Frames without
    /// detections get a zero row.
    pub fn object_branch(&self, tape: &mut Tape, params: &Bound, video: &VideoSample) -> Result<Var, ModelError> {
        let c = &self.config;
        let n = video.frames.len();
        let nodes = self.object_nodes(video);
        let m = nodes.frame_of.len();
        if m == 0 {
            return Ok(tape.constant(Tensor::zeros(&[n, c.object_out()]))?);
        }
        let mut fe = Vec::with_capacity(m * c.visual_dim);
        let mut fl = Vec::with_capacity(m * c.label_dim);
        for f in &video.frames {
            for s in f.slots.iter().take(c.slots).filter(|s| s.valid) {
                fe.extend(s.visual.iter().map(|x| *x as f64));
                fl.extend(s.label.iter().map(|x| *x as f64));
            }
        }
        let fe = tape.constant(Tensor::matrix(m, c.visual_dim, fe)?)?;
        let fl = tape.constant(Tensor::matrix(m, c.label_dim, fl)?)?;
        let ee = self.phi_e.forward(tape, params, fe)?;
        let el = self.phi_l.forward(tape, params, fl)?;
        let x = tape.concat(&[ee, el], 1)?;

        let (se, te) = self.object_edges(video, &nodes)?;
        let fs = self.spatial.forward_edges(tape, params, x, x, &se, c.aggregation)?.out;
        let ft = self.temporal.forward_edges(tape, params, x, x, &te, c.aggregation)?.out;
        let obj = tape.concat(&[fs, ft], 1)?;

        match c.pooling {
            Pooling::Mean => {
                let mut counts = vec![0usize; n];
                nodes.frame_of.iter().for_each(|t| counts[*t] += 1);
                let summed = tape.scatter_add_rows(obj, &nodes.frame_of, n)?;
                let inv: Vec<f64> = counts.iter().map(|k| if *k == 0 { 0.0 } else { 1.0 / *k as f64 }).collect();
                Ok(tape.scale_rows(summed, &inv)?)
            }
            Pooling::Max => Ok(tape.segment_max(obj, &nodes.frame_of, n)?),
        }
    }

    /// `LSTM(φ_fr(f_fr))`, or just `φ_fr(f_fr)` when the LSTM is disabled.
    pub fn global_branch(&self, tape: &mut Tape, params: &Bound, video: &VideoSample) -> Result<Var, ModelError> {
        let c = &self.config;
        let n = video.frames.len();
        let mut g = Vec::with_capacity(n * c.global_dim);
        for (t, f) in video.frames.iter().enumerate() {
            if f.global.len() != c.global_dim {
                return Err(ModelError::Input {
                    video: video.id.clone(),
                    reason: format!("frame {}: global dim {} != {}", t + 1, f.global.len(), c.global_dim),
                });
            }
            g.extend(f.global.iter().map(|x| *x as f64));
        }
        let g = tape.constant(Tensor::matrix(n, c.global_dim, g)?)?;
        let g = self.phi_fr.forward(tape, params, g)?;
        if c.use_lstm {
            Ok(self.lstm.forward(tape, params, g, None, None)?)
        } else {
            Ok(g)
        }
    }

    /// Two GATs over the causal frame graph, concatenated and classified into
    /// `N × 2` logits.
    pub fn frame_graph_head(&self, tape: &mut Tape, params: &Bound, objects: Var, global: Var) -> Result<Var, ModelError> {
        let c = &self.config;
        let n = tape.shape(objects)[0];
        if tape.shape(global)[0] != n {
            return Err(ModelError::Nn(NnError::Tensor(TensorError::ShapeMismatch {
                op: "frame_graph_head",
                left: tape.shape(objects).to_vec(),
                right: tape.shape(global).to_vec(),
            })));
        }
        let a = frame_adjacency(n, c.window)?;
        let edges = EdgeList::from_adjacency(&a, Coupling::Binary);
        let fo = self.frame_objects.forward_edges(tape, params, objects, objects, &edges, c.aggregation)?.out;
        let fg = self.frame_global.forward_edges(tape, params, global, global, &edges, c.aggregation)?.out;
        let f = tape.concat(&[fo, fg], 1)?;
        let hidden = self.head_hidden.forward(tape, params, f)?;
        let hidden = tape.relu(hidden)?;
        self.head_out.forward(tape, params, hidden).map_err(Into::into)
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, video: &VideoSample) -> Result<ForwardOutput, ModelError> {
        self.check_video(video)?;
        let objects = self.object_branch(tape, params, video)?;
        let global = self.global_branch(tape, params, video)?;
        let logits = self.frame_graph_head(tape, params, objects, global)?;
        Ok(ForwardOutput { objects, global, logits })
    }

    /// Accident probability per frame, with frozen parameters.
    pub fn predict(&self, video: &VideoSample) -> Result<PredictionSeries, ModelError> {
        let mut tape = Tape::new();
        let params = self.store.bind_frozen(&mut tape)?;
        let out = self.forward(&mut tape, &params, video)?;
        let probs = tape.softmax_rows(out.logits)?;
        let p = tape.value(probs);
        Ok(PredictionSeries {
            id: video.id.clone(),
            fps: video.fps,
            label: video.positive,
            onset: video.onset,
            probs: (0..p.rows()).map(|t| p.at(t, 1)).collect(),
        })
    }

    /// Loss on one video and its gradient for every parameter, in store order.
    pub fn loss_and_grads(&self, video: &VideoSample, mode: LabelMode) -> Result<(f64, Vec<Tensor>), ModelError> {
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape)?;
        let out = self.forward(&mut tape, &params, video)?;
        let loss = cross_entropy_loss(&mut tape, out.logits, video.positive, video.onset, mode)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        Ok((value, params.collect(&grads, &self.store)))
    }
}

/// Per-frame targets and inclusion flags under `mode`.
pub fn frame_targets(frames: usize, positive: bool, onset: Option<u32>, mode: LabelMode) -> Vec<Option<usize>> {
    (1..=frames)
        .map(|t| match (positive, mode, onset) {
            (false, _, _) => Some(0),
            (true, LabelMode::AllFrames, _) | (true, LabelMode::BeforeOnset, None) => Some(1),
            (true, LabelMode::BeforeOnset, Some(a)) => (t < a as usize).then_some(1),
        })
        .collect()
}

/// Mean over included frames of `−log softmax(logits_t)[y_t]`.
pub fn cross_entropy_loss(tape: &mut Tape, logits: Var, positive: bool, onset: Option<u32>, mode: LabelMode) -> Result<Var, ModelError> {
    let n = tape.shape(logits)[0];
    let targets = frame_targets(n, positive, onset, mode);
    let included = targets.iter().filter(|t| t.is_some()).count();
    let logp = tape.log_softmax_rows(logits)?;
    let idx: Vec<usize> = targets.iter().map(|t| t.unwrap_or(0)).collect();
    let picked = tape.pick_per_row(logp, &idx)?;
    let w: Vec<f64> = targets
        .iter()
        .map(|t| if t.is_some() { -1.0 / included as f64 } else { 0.0 })
        .collect();
    Ok(tape.weighted_sum(picked, &w)?)
}
