//! Adam with bias correction and global gradient-norm clipping.

use super::tape::{ParamStore, Real, Tensor};

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, clip_norm: Option<f64>) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters. Gradients are clipped jointly to
    /// `clip_norm` before the moment updates.
    pub fn step<F: Real>(&mut self, params: &mut ParamStore<F>, grads: &[Tensor<F>]) {
        assert_eq!(params.len(), grads.len(), "adam: {} params vs {} grads", params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
            self.v = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
        }
        let total_norm: f64 = grads
            .iter()
            .map(|g| g.data.iter().map(|x| x.to_f64() * x.to_f64()).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let scale = match self.clip_norm {
            Some(c) if total_norm > c => c / total_norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for p in 0..params.len() {
            let pt = params.get_mut(p);
            for i in 0..pt.numel() {
                let g = grads[p].data[i].to_f64() * scale;
                self.m[p][i] = self.beta1 * self.m[p][i] + (1.0 - self.beta1) * g;
                self.v[p][i] = self.beta2 * self.v[p][i] + (1.0 - self.beta2) * g * g;
                let mhat = self.m[p][i] / bc1;
                let vhat = self.v[p][i] / bc2;
                let upd = pt.data[i].to_f64() - self.lr * mhat / (vhat.sqrt() + self.eps);
                pt.data[i] = F::from_f64(upd);
            }
        }
    }
}
