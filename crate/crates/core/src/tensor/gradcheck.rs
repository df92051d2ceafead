use thiserror::Error;

use super::{Tape, Tensor, TensorError, Var};

/// Floor on the denominator of the relative error, per unit of `|f(θ)|`.
/// Central differences at step 1e-5 carry round-off near `1e-11·|f|`.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite function value while probing coordinate {index}")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate where the maximum occurred.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the tape gradient of `f` at `theta` with central differences.
///
/// `f` receives a fresh tape and the variable holding `theta` and must return
/// a one-element result. The returned error is
/// `max_i |g_i − fd_i| / max(|g_i|, |fd_i|, 1e-6·max(1, |f(θ)|))`.
pub fn finite_difference_check<F>(mut f: F, theta: &Tensor, step: f64) -> Result<GradCheck, GradCheckError>
where
    F: FnMut(&mut Tape, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(theta.clone())?;
    let y = f(&mut tape, x)?;
    let f0 = tape.value(y).item();
    let floor = REL_FLOOR * f0.abs().max(1.0);
    let grads = tape.backward(y)?;
    let analytic = grads
        .get(x)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; theta.numel()]);

    let mut eval = |t: Tensor, index: usize| -> Result<f64, GradCheckError> {
        let mut tape = Tape::new();
        let x = tape.constant(t)?;
        let y = f(&mut tape, x)?;
        let v = tape.value(y).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(GradCheckError::NonFinite { index })
        }
    };

    let mut numeric = Vec::with_capacity(theta.numel());
    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for i in 0..theta.numel() {
        let mut plus = theta.clone();
        plus.data_mut()[i] += step;
        let mut minus = theta.clone();
        minus.data_mut()[i] -= step;
        let fd = (eval(plus, i)? - eval(minus, i)?) / (2.0 * step);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(floor);
        if err > max_rel_error {
            max_rel_error = err;
            worst_index = i;
        }
        numeric.push(fd);
    }
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
