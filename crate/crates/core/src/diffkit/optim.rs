use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{DiffError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are laid out in the order of
/// the parameter list passed to [`Adam::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update. `grads[k]` is the gradient of `params[k]`; `None` counts
    /// as a zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&[f64]>]) -> Result<(), DiffError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(DiffError::Shape {
                op: "adam",
                detail: "parameter count differs from optimizer state",
            });
        }
        for (k, p) in params.iter().enumerate() {
            if p.len() != self.m[k].len() || grads[k].is_some_and(|g| g.len() != p.len()) {
                return Err(DiffError::Shape {
                    op: "adam",
                    detail: "gradient length differs from parameter",
                });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let data = p.data_mut();
            for i in 0..data.len() {
                let g = grads[k].map_or(0.0, |g| g[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                data[i] -= lr * mhat / (libm::sqrt(vhat) + eps);
            }
            if !p.is_finite() {
                return Err(DiffError::NonFinite { op: "adam" });
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning-rate schedule driven by the epoch train loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    /// Epochs without improvement before the rate is cut.
    pub patience: usize,
    /// Minimum absolute decrease that counts as an improvement.
    pub threshold: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 10,
            threshold: 1e-4,
            min_lr: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub config: PlateauConfig,
    lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauSchedule {
    pub fn new(config: PlateauConfig, initial_lr: f64) -> Self {
        Self {
            config,
            lr: initial_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one epoch loss and returns the rate for the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best - self.config.threshold {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.config.patience {
                self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(grad: f64, steps: usize) -> f64 {
        let mut p = Tensor::vector(vec![0.5]);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        for _ in 0..steps {
            let g = [grad];
            adam.step(&mut [&mut p], &[Some(&g)]).unwrap();
        }
        p.data()[0]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        assert_eq!(run(0.0, 25), 0.5);
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        adam.step(&mut [&mut p], &[None]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        assert!(run(0.3, 50) < 0.5);
        assert!(run(-0.3, 50) > 0.5);
    }

    #[test]
    fn first_step_is_about_one_learning_rate() {
        // m̂ = g and v̂ = g² at t = 1, so the step is lr * g / (|g| + eps).
        let lr = AdamConfig::default().lr;
        let expect = 0.5 - lr * 1.0 / (1.0 + 1e-8);
        assert!((run(1.0, 1) - expect).abs() < 1e-15);
        assert!((run(1.0, 1) - (0.5 - lr)).abs() < 1e-9);
    }

    #[test]
    fn rejects_mismatched_gradients() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        let g = [1.0];
        assert!(adam.step(&mut [&mut p], &[Some(&g)]).is_err());
    }

    #[test]
    fn plateau_halves_after_patience_and_respects_floor() {
        let mut s = PlateauSchedule::new(PlateauConfig::default(), 1e-2);
        s.observe(1.0);
        for _ in 0..9 {
            assert_eq!(s.observe(1.0), 1e-2);
        }
        assert_eq!(s.observe(1.0), 5e-3);
        // Improvements smaller than the threshold do not count.
        for i in 0..10 {
            s.observe(1.0 - 1e-5 * i as f64);
        }
        assert_eq!(s.lr(), 2.5e-3);
        for _ in 0..1000 {
            s.observe(1.0);
        }
        assert_eq!(s.lr(), 1e-5);
    }
}
