use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    /// SGD with Nesterov momentum 0.9.
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(crate::error::Error::InvalidArgument(format!("unknown optimizer {s:?} (adam, sgd)"))),
        }
    }
}

const MOMENTUM: f64 = 0.9;
const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Learning rate for `epoch` (0-based): divided by 10 from the epoch at 50%
/// of training and again at 75%.
pub fn step_decay_lr(base: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs < 2 {
        return base;
    }
    let half = epochs.div_ceil(2);
    let three_quarters = (3 * epochs).div_ceil(4);
    let drops = (epoch >= half) as i32 + (epoch >= three_quarters) as i32;
    base * 10f64.powi(-drops)
}

/// Optimizer state for a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    weight_decay: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64, shapes: &[usize]) -> Self {
        let zeros = || shapes.iter().map(|&n| vec![0.0; n]).collect();
        Optimizer { kind, weight_decay, first: zeros(), second: zeros(), steps: 0 }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// One update of every parameter tensor with its gradient.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[Vec<f64>], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.first.len());
        self.steps += 1;
        let t = self.steps;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for j in 0..p.len() {
                let grad = g[j] + self.weight_decay * p[j];
                match self.kind {
                    OptimizerKind::Sgd => {
                        m[j] = MOMENTUM * m[j] + grad;
                        p[j] -= lr * (grad + MOMENTUM * m[j]);
                    }
                    OptimizerKind::Adam => {
                        m[j] = ADAM_B1 * m[j] + (1.0 - ADAM_B1) * grad;
                        v[j] = ADAM_B2 * v[j] + (1.0 - ADAM_B2) * grad * grad;
                        let mh = m[j] / (1.0 - ADAM_B1.powi(t));
                        let vh = v[j] / (1.0 - ADAM_B2.powi(t));
                        p[j] -= lr * mh / (vh.sqrt() + ADAM_EPS);
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
    fn decay_schedule() {
        let lrs: Vec<f64> = (0..8).map(|e| step_decay_lr(1.0, e, 8)).collect();
        assert_eq!(lrs, vec![1.0, 1.0, 1.0, 1.0, 0.1, 0.1, 0.01, 0.01]);
        assert_eq!(step_decay_lr(0.5, 0, 1), 0.5);
        assert_eq!(step_decay_lr(1.0, 2, 5), 1.0);
        assert_eq!(step_decay_lr(1.0, 3, 5), 0.1);
        assert_eq!(step_decay_lr(1.0, 4, 5), 0.01);
    }

    #[test]
    fn zero_learning_rate_freezes() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut opt = Optimizer::new(kind, 0.0, &[3]);
            let mut p = vec![1.0, -2.0, 3.0];
            opt.step(&mut [&mut p], &[vec![0.5, 0.5, -1.0]], 0.0);
            assert_eq!(p, vec![1.0, -2.0, 3.0]);
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut opt = Optimizer::new(kind, 0.0, &[2]);
            let mut p = vec![3.0, -4.0];
            for _ in 0..500 {
                let g = vec![2.0 * p[0], 2.0 * p[1]];
                opt.step(&mut [&mut p], &[g], 0.05);
            }
            assert!(p.iter().all(|v| v.abs() < 1e-2), "{kind:?}: {p:?}");
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.0, &[1]);
        let mut p = vec![0.0];
        opt.step(&mut [&mut p], &[vec![123.0]], 0.01);
        assert!((p[0] + 0.01).abs() < 1e-9);
    }
}
