use serde::{Deserialize, Serialize};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient descent, `theta <- theta - lr * grad`.
    Sgd,
    Adam { beta1: f64, beta2: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.5, beta2: 0.999 }
    }
}

const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    moments: Vec<(Tensor, Tensor)>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self { kind, lr, moments: Vec::new(), steps: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Apply one update to `params` given gradients in the same order.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    p.zip_mut_with(g, |p, &g| *p -= self.lr * g);
                }
            }
            OptimizerKind::Adam { beta1, beta2 } => {
                if self.moments.is_empty() {
                    self.moments = grads
                        .iter()
                        .map(|g| (Tensor::zeros(g.raw_dim()), Tensor::zeros(g.raw_dim())))
                        .collect();
                }
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(&mut self.moments) {
                    m.zip_mut_with(g, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
                    v.zip_mut_with(g, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
                    ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                        *p -= self.lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    #[test]
    fn both_optimizers_descend_a_quadratic() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::default()] {
            let mut x = ArrayD::from_elem(vec![3], 2.0);
            let mut opt = Optimizer::new(kind, 0.05);
            for _ in 0..400 {
                let g = x.mapv(|v| 2.0 * v);
                opt.step(vec![&mut x], &[g]);
            }
            assert!(x.iter().all(|v| v.abs() < 0.05), "{kind:?}: {x}");
        }
    }
}
