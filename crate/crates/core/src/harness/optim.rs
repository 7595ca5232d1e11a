use super::config::{OptimizerConfig, OptimizerKind};
use crate::tensor::Tensor;

/// First-order optimiser state over a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update. `grads[i]` must match `params[i]` in shape.
    pub fn update(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c = self.cfg;
        match c.kind {
            OptimizerKind::Sgd => {
                for ((p, g), buf) in params.into_iter().zip(grads).zip(&mut self.m) {
                    for ((x, &gi), b) in p.data_mut().iter_mut().zip(g.data()).zip(buf.iter_mut()) {
                        *b = c.momentum * *b + gi;
                        *x -= c.lr * (*b + c.weight_decay * *x);
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                        *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *x -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *x);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_is_exact() {
        let mut opt = Optimizer::new(OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.1,
            ..OptimizerConfig::default()
        });
        let mut p = Tensor::row(vec![1.0, -2.0]).unwrap();
        opt.update(vec![&mut p], &[Tensor::row(vec![0.5, 3.0]).unwrap()]);
        assert_eq!(p.data(), &[1.0 - 0.05, -2.0 - 0.30000000000000004]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerConfig::default());
        let mut p = Tensor::row(vec![0.0, 0.0]).unwrap();
        opt.update(vec![&mut p], &[Tensor::row(vec![2.0, -0.01]).unwrap()]);
        assert!((p.data()[0] + 1e-3).abs() < 1e-9);
        assert!((p.data()[1] - 1e-3).abs() < 1e-6);
    }
}
