//! GATv2 attention over weighted, possibly bipartite, edge lists.
//!
//! For target `i` with neighbors `j`:
//!
//! ```text
//! e_ij = aᵀ · LeakyReLU(W_dst·h_i + W_src·h_j) + log(A_ij + 1e-10)
//! α_ij = softmax_j(e_ij)
//! out_i = Σ_j α_ij · W_src·h_j
//! ```
//!
//! Heads are concatenated. Targets without neighbors produce zero rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{xavier_uniform, Bound, NnError, ParamId, ParamStore};
use crate::graph::AdjacencyMatrix;
use crate::tensor::{Tape, Tensor, Var};

const LOG_WEIGHT_EPS: f64 = 1e-10;

/// How real-valued adjacency weights enter the attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Edge iff `A_ij > 0`, with `log(A_ij + ε)` added to its logit.
    #[default]
    LogWeight,
    /// Edge iff `A_ij > 0`, weights otherwise ignored.
    Binary,
}

/// How neighbor messages are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Attention,
    /// Plain mean over neighbors; attention parameters are unused.
    Uniform,
}

/// Directed edges `source → target` with their logit offsets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeList {
    pub targets: Vec<usize>,
    pub sources: Vec<usize>,
    pub logit_bias: Vec<f64>,
}

impl EdgeList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn push(&mut self, target: usize, source: usize, weight: f64, coupling: Coupling) {
        if weight > 0.0 {
            self.targets.push(target);
            self.sources.push(source);
            self.logit_bias.push(match coupling {
                Coupling::LogWeight => (weight + LOG_WEIGHT_EPS).ln(),
                Coupling::Binary => 0.0,
            });
        }
    }

    /// Appends the positive entries of `a`, shifting row indices by
    /// `target_offset` and column indices by `source_offset`.
    pub fn extend_from_adjacency(&mut self, a: &AdjacencyMatrix, coupling: Coupling, target_offset: usize, source_offset: usize) {
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                self.push(target_offset + i, source_offset + j, a.get(i, j), coupling);
            }
        }
    }

    pub fn from_adjacency(a: &AdjacencyMatrix, coupling: Coupling) -> Self {
        let mut e = Self::new();
        e.extend_from_adjacency(a, coupling, 0, 0);
        e
    }
}

#[derive(Debug, Clone, PartialEq)]
struct GatHead {
    w_src: ParamId,
    w_dst: ParamId,
    attn: ParamId,
}

/// One GATv2 layer; `out_dim` is split evenly across heads.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    heads: Vec<GatHead>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub slope: f64,
}

#[derive(Debug, Clone)]
pub struct GatOutput {
    /// `targets × out_dim`
    pub out: Var,
    /// Per head, one attention weight per edge (absent when there are no edges).
    pub attention: Vec<Var>,
}

impl GatLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        heads: usize,
        slope: f64,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if heads == 0 || in_dim == 0 || out_dim == 0 || out_dim % heads != 0 {
            return Err(NnError::Config(format!(
                "{name}: output dim {out_dim} must be a positive multiple of {heads} heads"
            )));
        }
        let hd = out_dim / heads;
        let heads = (0..heads)
            .map(|h| {
                Ok(GatHead {
                    w_src: store.add(format!("{name}.h{h}.w_src"), xavier_uniform(hd, in_dim, rng))?,
                    w_dst: store.add(format!("{name}.h{h}.w_dst"), xavier_uniform(hd, in_dim, rng))?,
                    attn: store.add(format!("{name}.h{h}.attn"), xavier_uniform(hd, 1, rng))?,
                })
            })
            .collect::<Result<_, NnError>>()?;
        Ok(Self {
            heads,
            in_dim,
            out_dim,
            slope,
        })
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    /// Message passing from `x_src` rows to `x_dst` rows along `edges`.
    pub fn forward_edges(
        &self,
        tape: &mut Tape,
        params: &Bound,
        x_dst: Var,
        x_src: Var,
        edges: &EdgeList,
        aggregation: Aggregation,
    ) -> Result<GatOutput, NnError> {
        let n_dst = tape.shape(x_dst)[0];
        let n_src = tape.shape(x_src)[0];
        if let Some(bad) = edges
            .targets
            .iter()
            .zip(&edges.sources)
            .find(|(t, s)| **t >= n_dst || **s >= n_src)
        {
            return Err(NnError::Adjacency {
                rows: bad.0 + 1,
                cols: bad.1 + 1,
                targets: n_dst,
                sources: n_src,
            });
        }
        if edges.is_empty() {
            let out = tape.constant(Tensor::zeros(&[n_dst, self.out_dim]))?;
            return Ok(GatOutput {
                out,
                attention: Vec::new(),
            });
        }

        let e = edges.len();
        let bias = tape.constant(Tensor::matrix(e, 1, edges.logit_bias.clone())?)?;
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut attention = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let src = tape.matmul_nt(x_src, params.var(head.w_src))?;
            let src_e = tape.gather_rows(src, &edges.sources)?;
            let alpha = match aggregation {
                Aggregation::Attention => {
                    let dst = tape.matmul_nt(x_dst, params.var(head.w_dst))?;
                    let dst_e = tape.gather_rows(dst, &edges.targets)?;
                    let pre = tape.add(dst_e, src_e)?;
                    let act = tape.leaky_relu(pre, self.slope)?;
                    let score = tape.matmul(act, params.var(head.attn))?;
                    let logits = tape.add(score, bias)?;
                    tape.segment_softmax(logits, &edges.targets, n_dst)?
                }
                Aggregation::Uniform => {
                    let zeros = tape.constant(Tensor::zeros(&[e, 1]))?;
                    tape.segment_softmax(zeros, &edges.targets, n_dst)?
                }
            };
            let msg = tape.mul_rows(src_e, alpha)?;
            outs.push(tape.scatter_add_rows(msg, &edges.targets, n_dst)?);
            attention.push(alpha);
        }
        let out = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 1)? };
        Ok(GatOutput { out, attention })
    }
}

/// GATv2 over a square adjacency matrix on node features `h` (`n × d`).
pub fn gatv2_forward(
    tape: &mut Tape,
    params: &Bound,
    layer: &GatLayer,
    h: Var,
    a: &AdjacencyMatrix,
    coupling: Coupling,
    aggregation: Aggregation,
) -> Result<GatOutput, NnError> {
    let n = tape.shape(h)[0];
    if a.rows() != n || a.cols() != n {
        return Err(NnError::Adjacency {
            rows: a.rows(),
            cols: a.cols(),
            targets: n,
            sources: n,
        });
    }
    let edges = EdgeList::from_adjacency(a, coupling);
    layer.forward_edges(tape, params, h, h, &edges, aggregation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(in_dim: usize, out_dim: usize, heads: usize, seed: u64) -> (ParamStore, GatLayer) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = GatLayer::new(&mut store, "gat", in_dim, out_dim, heads, 0.2, &mut rng).unwrap();
        (store, layer)
    }

    #[test]
    fn single_neighbor_copies_its_message() {
        let (store, layer) = setup(3, 2, 1, 4);
        let h = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -1.0, 0.5, 2.0]).unwrap();
        let mut a = AdjacencyMatrix::zeros(2, 2);
        a.set(0, 1, 0.7);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape).unwrap();
        let hv = tape.constant(h.clone()).unwrap();
        let out = gatv2_forward(&mut tape, &p, &layer, hv, &a, Coupling::LogWeight, Aggregation::Attention).unwrap();
        let w = store.get(layer.heads[0].w_src);
        let o = tape.value(out.out);
        for k in 0..2 {
            let expect: f64 = (0..3).map(|c| w.at(k, c) * h.at(1, c)).sum();
            assert!((o.at(0, k) - expect).abs() < 1e-14);
            assert_eq!(o.at(1, k), 0.0);
        }
        assert_eq!(tape.value(out.attention[0]).data(), &[1.0]);
    }

    #[test]
    fn identical_nodes_get_identical_rows() {
        let (store, layer) = setup(2, 4, 2, 9);
        let h = Tensor::matrix(2, 2, vec![0.4, -0.3, 0.4, -0.3]).unwrap();
        let a = AdjacencyMatrix::from_fn(2, 2, |_, _| 0.25);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape).unwrap();
        let hv = tape.constant(h).unwrap();
        let out = gatv2_forward(&mut tape, &p, &layer, hv, &a, Coupling::LogWeight, Aggregation::Attention).unwrap();
        let o = tape.value(out.out);
        assert_eq!(o.row(0), o.row(1));
    }

    #[test]
    fn empty_adjacency_gives_zero_rows() {
        let (store, layer) = setup(2, 2, 1, 1);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape).unwrap();
        let hv = tape.constant(Tensor::full(&[3, 2], 1.0)).unwrap();
        let a = AdjacencyMatrix::zeros(3, 3);
        let out = gatv2_forward(&mut tape, &p, &layer, hv, &a, Coupling::Binary, Aggregation::Attention).unwrap();
        assert!(tape.value(out.out).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn negative_weights_are_not_edges() {
        let mut e = EdgeList::new();
        e.push(0, 1, -0.5, Coupling::LogWeight);
        e.push(0, 2, 0.0, Coupling::LogWeight);
        assert!(e.is_empty());
    }

    #[test]
    fn mismatched_adjacency_rejected() {
        let (store, layer) = setup(2, 2, 1, 1);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape).unwrap();
        let hv = tape.constant(Tensor::full(&[3, 2], 1.0)).unwrap();
        let a = AdjacencyMatrix::zeros(2, 2);
        assert!(matches!(
            gatv2_forward(&mut tape, &p, &layer, hv, &a, Coupling::Binary, Aggregation::Attention),
            Err(NnError::Adjacency { .. })
        ));
    }

    #[test]
    fn heads_must_divide_output() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(GatLayer::new(&mut store, "g", 4, 5, 2, 0.2, &mut rng).is_err());
    }
}
