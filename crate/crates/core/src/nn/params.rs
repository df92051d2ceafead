use rand::Rng;

use super::NnError;
use crate::tensor::{Gradients, Tape, Tensor, TensorError, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Parameters live here as plain values between steps; each forward pass
/// binds them onto a fresh tape with [`ParamStore::bind`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, NnError> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Binds every parameter as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bound, TensorError> {
        let vars = self.values.iter().map(|v| tape.leaf(v.clone())).collect::<Result<_, _>>()?;
        Ok(Bound { vars })
    }

    /// Binds every parameter as a constant, for inference.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Result<Bound, TensorError> {
        let vars = self.values.iter().map(|v| tape.constant(v.clone())).collect::<Result<_, _>>()?;
        Ok(Bound { vars })
    }

    /// Binds every parameter as a constant except `id`, which becomes `var`.
    pub fn bind_one(&self, tape: &mut Tape, id: ParamId, var: Var) -> Result<Bound, TensorError> {
        let vars = self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| if k == id.0 { Ok(var) } else { tape.constant(v.clone()) })
            .collect::<Result<_, _>>()?;
        Ok(Bound { vars })
    }
}

/// Parameter variables on one tape, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients in store order; parameters that did not reach the loss get zeros.
    pub fn collect(&self, grads: &Gradients, store: &ParamStore) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(store.values())
            .map(|(v, p)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    }
}

/// Glorot-uniform matrix `rows × cols` in `±√(6/(fan_in+fan_out))`.
pub fn xavier_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}
