//! Adam with global gradient-norm clipping.

use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = |ps: &ParamSet| {
            ps.tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect()
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            m: zeros(params),
            v: zeros(params),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Gradients are scaled down so their global norm is at most
    /// `max_norm` (when given). Returns the pre-clip norm.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &[Tensor],
        lr: f64,
        max_norm: Option<f64>,
    ) -> f64 {
        let norm = global_norm(grads);
        let scale = match max_norm {
            Some(c) if norm > c => c / (norm + 1e-12),
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads.iter().enumerate() {
            let p = params.get_mut(id);
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for i in 0..g.data.len() {
                let gi = g.data[i] * scale;
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        norm
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}
