use rand::Rng;

use super::{xavier_uniform, Bound, NnError, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Single-layer LSTM. Gate blocks are stacked in the order
/// input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    /// Forget-gate bias starts at 1.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut R) -> Result<Self, NnError> {
        if in_dim == 0 || hidden == 0 {
            return Err(NnError::Config(format!("{name}: zero-sized LSTM")));
        }
        let w_ih = store.add(format!("{name}.w_ih"), xavier_uniform(4 * hidden, in_dim, rng))?;
        let w_hh = store.add(format!("{name}.w_hh"), xavier_uniform(4 * hidden, hidden, rng))?;
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let bias = store.add(format!("{name}.bias"), Tensor::new(vec![4 * hidden], b)?)?;
        Ok(Self {
            w_ih,
            w_hh,
            bias,
            in_dim,
            hidden,
        })
    }

    /// Runs the recurrence over `seq` (`T × in_dim`) and returns every hidden
    /// state stacked as `T × hidden`. Missing initial states are zeros.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, seq: Var, h0: Option<Var>, c0: Option<Var>) -> Result<Var, NnError> {
        let steps = tape.shape(seq)[0];
        let hd = self.hidden;
        let xw = tape.matmul_nt(seq, params.var(self.w_ih))?;
        let xw = tape.add_row(xw, params.var(self.bias))?;
        let mut h = match h0 {
            Some(h) => h,
            None => tape.constant(Tensor::zeros(&[1, hd]))?,
        };
        let mut c = match c0 {
            Some(c) => c,
            None => tape.constant(Tensor::zeros(&[1, hd]))?,
        };
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x_t = tape.slice_rows(xw, t, 1)?;
            let rec = tape.matmul_nt(h, params.var(self.w_hh))?;
            let gates = tape.add(x_t, rec)?;
            let i = tape.slice_cols(gates, 0, hd)?;
            let i = tape.sigmoid(i)?;
            let f = tape.slice_cols(gates, hd, hd)?;
            let f = tape.sigmoid(f)?;
            let g = tape.slice_cols(gates, 2 * hd, hd)?;
            let g = tape.tanh(g)?;
            let o = tape.slice_cols(gates, 3 * hd, hd)?;
            let o = tape.sigmoid(o)?;
            let keep = tape.mul(f, c)?;
            let write = tape.mul(i, g)?;
            c = tape.add(keep, write)?;
            let squashed = tape.tanh(c)?;
            h = tape.mul(o, squashed)?;
            if !tape.value(c).is_finite() || !tape.value(h).is_finite() {
                return Err(NnError::NonFiniteState { step: t });
            }
            hs.push(h);
        }
        Ok(tape.concat(&hs, 0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_parameters_keep_state_at_zero() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lstm = Lstm::new(&mut store, "lstm", 3, 4, &mut rng).unwrap();
        for v in store.values_mut() {
            v.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut tape = Tape::new();
        let p = store.bind(&mut tape).unwrap();
        let seq = tape.constant(Tensor::matrix(5, 3, (0..15).map(|k| k as f64 * 0.3 - 2.0).collect()).unwrap()).unwrap();
        let out = lstm.forward(&mut tape, &p, seq, None, None).unwrap();
        assert_eq!(tape.value(out).shape(), &[5, 4]);
        assert!(tape.value(out).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_step_matches_hand_cell() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lstm = Lstm::new(&mut store, "lstm", 2, 2, &mut rng).unwrap();
        let x = [0.7, -0.4];
        let mut tape = Tape::new();
        let p = store.bind(&mut tape).unwrap();
        let seq = tape.constant(Tensor::matrix(1, 2, x.to_vec()).unwrap()).unwrap();
        let out = lstm.forward(&mut tape, &p, seq, None, None).unwrap();

        let w = store.get(lstm.w_ih);
        let b = store.get(lstm.bias);
        let pre: Vec<f64> = (0..8).map(|r| b.data()[r] + w.at(r, 0) * x[0] + w.at(r, 1) * x[1]).collect();
        for k in 0..2 {
            let i = sig(pre[k]);
            let g = pre[4 + k].tanh();
            let o = sig(pre[6 + k]);
            let c = i * g;
            let h = o * c.tanh();
            assert!((tape.value(out).at(0, k) - h).abs() < 1e-14);
        }
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lstm = Lstm::new(&mut store, "lstm", 2, 3, &mut rng).unwrap();
        assert_eq!(store.get(lstm.bias).data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn overflow_is_rejected() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lstm = Lstm::new(&mut store, "lstm", 1, 1, &mut rng).unwrap();
        store.get_mut(lstm.w_ih).data_mut().iter_mut().for_each(|v| *v = 1e300);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape).unwrap();
        let seq = tape.constant(Tensor::matrix(2, 1, vec![1.0, 1e300]).unwrap()).unwrap();
        let err = lstm.forward(&mut tape, &p, seq, None, None).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteState { .. } | NnError::Tensor(_)));
    }
}
