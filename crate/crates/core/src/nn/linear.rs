use rand::Rng;

use super::{xavier_uniform, Bound, NnError, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Fully connected layer `x·Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self, NnError> {
        if in_dim == 0 || out_dim == 0 {
            return Err(NnError::Config(format!("{name}: zero-sized linear layer")));
        }
        let weight = store.add(format!("{name}.weight"), xavier_uniform(out_dim, in_dim, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var, NnError> {
        let y = tape.matmul_nt(x, params.var(self.weight))?;
        Ok(tape.add_row(y, params.var(self.bias))?)
    }
}
