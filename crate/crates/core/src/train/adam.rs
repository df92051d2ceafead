use crate::tensor::Tensor;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient held NaN or infinity; nothing was changed.
    SkippedNonFinite,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates `params` in place. Shapes must match those given to `new`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> StepOutcome {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if grads.iter().any(|g| !g.is_finite()) {
            log::warn!("non-finite gradient, optimizer step {} skipped", self.step + 1);
            return StepOutcome::SkippedNonFinite;
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.shape(), g.shape(), "gradient shape");
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (x, gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *x -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        StepOutcome::Applied
    }
}
