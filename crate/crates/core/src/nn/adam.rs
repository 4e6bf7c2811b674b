use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, shapes: &[&Tensor]) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    /// One update of `params` with `grads` at the current `lr`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!(
                    "{} params, {} grads, {} moment buffers",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            });
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.len() != self.m[k].len() {
                return Err(Error::Shape {
                    op: "adam_step",
                    detail: format!("parameter {k}: {:?} vs gradient {:?}", p.shape(), g.shape()),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (x, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
