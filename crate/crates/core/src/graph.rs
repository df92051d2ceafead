//! Adjacency builders for the object graphs and the frame graph.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("no valid objects in frame")]
    EmptyGraph,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("feature dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("{what}: expected {expected} entries, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("frame graph needs at least one frame and a window of at least one")]
    EmptyWindow,
}

/// Axis-aligned box in pixel coordinates, stored as center and extent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn center_distance(&self, other: &BoundingBox) -> f64 {
        let dx = self.cx - other.cx;
        let dy = self.cy - other.cy;
        (dx * dx + dy * dy).sqrt()
    }

    fn is_finite(&self) -> bool {
        self.cx.is_finite() && self.cy.is_finite() && self.w.is_finite() && self.h.is_finite()
    }
}

/// Dense nonnegative-by-construction weight matrix, `rows × cols`.
///
/// Square for the spatial and frame graphs; the temporal block is
/// `current objects × previous objects`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

impl AdjacencyMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.weights[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, w: f64) {
        self.weights[i * self.cols + j] = w;
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn nonzero_count(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    /// Copy with rows and columns reordered: entry `(i, j)` of the result is
    /// entry `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self.get(perm[i], perm[j]))
    }
}

/// How spatial weights are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialNorm {
    /// One sum over every valid pair, so the whole matrix sums to one.
    #[default]
    Global,
    /// Each valid row sums to one.
    RowWise,
}

/// Proximity weights `exp(−d(c_i, c_j))` over valid boxes, normalized by a
/// single sum over all valid pairs (self-pairs included).
///
/// Masked slots get zero rows and columns. The result has one row per slot.
pub fn spatial_adjacency(boxes: &[BoundingBox], mask: &[bool], norm: SpatialNorm) -> Result<AdjacencyMatrix, GraphError> {
    if boxes.len() != mask.len() {
        return Err(GraphError::Length {
            what: "mask",
            expected: boxes.len(),
            got: mask.len(),
        });
    }
    let n = boxes.len();
    if !mask.iter().any(|m| *m) {
        return Err(GraphError::EmptyGraph);
    }
    if boxes.iter().zip(mask).any(|(b, m)| *m && !b.is_finite()) {
        return Err(GraphError::NonFinite("box coordinates"));
    }
    let mut a = AdjacencyMatrix::zeros(n, n);
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        for j in i..n {
            if !mask[j] {
                continue;
            }
            let w = (-boxes[i].center_distance(&boxes[j])).exp();
            a.set(i, j, w);
            a.set(j, i, w);
        }
    }
    match norm {
        SpatialNorm::Global => {
            let total = a.total();
            a.weights.iter_mut().for_each(|w| *w /= total);
        }
        SpatialNorm::RowWise => {
            for i in 0..n {
                let row = &mut a.weights[i * n..(i + 1) * n];
                let s: f64 = row.iter().sum();
                if s > 0.0 {
                    row.iter_mut().for_each(|w| *w /= s);
                }
            }
        }
    }
    Ok(a)
}

/// One object as seen by the temporal builder.
#[derive(Debug, Clone, Copy)]
pub struct ObjectRef<'a> {
    pub class_id: u32,
    pub feature: &'a [f64],
    pub valid: bool,
}

/// Cosine similarity clamped to `[−1, 1]`; zero when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Links objects of frame `t` (rows) to objects of frame `t − u` (columns):
/// cosine similarity of their visual features when the class ids agree,
/// zero otherwise. Negative similarities are kept.
pub fn temporal_adjacency(curr: &[ObjectRef<'_>], prev: &[ObjectRef<'_>]) -> Result<AdjacencyMatrix, GraphError> {
    let mut a = AdjacencyMatrix::zeros(curr.len(), prev.len());
    for (i, ci) in curr.iter().enumerate() {
        if !ci.valid {
            continue;
        }
        for (j, pj) in prev.iter().enumerate() {
            if !pj.valid {
                continue;
            }
            if ci.feature.len() != pj.feature.len() {
                return Err(GraphError::DimMismatch(ci.feature.len(), pj.feature.len()));
            }
            if ci.class_id == pj.class_id {
                a.set(i, j, cosine_similarity(ci.feature, pj.feature));
            }
        }
    }
    if !a.weights.iter().all(|w| w.is_finite()) {
        return Err(GraphError::NonFinite("object features"));
    }
    Ok(a)
}

/// Causal frame graph: entry `(i, j)` is one iff `1 ≤ i − j ≤ k`.
pub fn frame_adjacency(frames: usize, window: usize) -> Result<AdjacencyMatrix, GraphError> {
    if frames == 0 || window == 0 {
        return Err(GraphError::EmptyWindow);
    }
    let mut a = AdjacencyMatrix::zeros(frames, frames);
    for i in 1..frames {
        for j in i.saturating_sub(window)..i {
            a.set(i, j, 1.0);
        }
    }
    Ok(a)
}
