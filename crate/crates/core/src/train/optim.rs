use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Step at which linear decay towards zero begins; `None` keeps the rate constant.
    pub decay_start: Option<u64>,
    /// Step at which the decayed rate reaches zero.
    pub decay_end: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            decay_start: None,
            decay_end: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lr > 0.0, "learning rate must be positive");
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            "adam betas must lie in [0, 1)"
        );
        ensure!(self.eps > 0.0, "adam eps must be positive");
        if let Some(start) = self.decay_start {
            ensure!(
                self.decay_end > start,
                "decay_end ({}) must exceed decay_start ({start})",
                self.decay_end
            );
        }
        Ok(())
    }

    /// Learning rate used for update number `step` (0-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.decay_start {
            Some(start) if step >= start => {
                let span = (self.decay_end - start) as f64;
                let frac = ((step - start) as f64 / span).min(1.0);
                self.lr * (1.0 - frac)
            }
            _ => self.lr,
        }
    }
}

/// Adam with bias correction; moments are held in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub(crate) t: u64,
    pub(crate) m: Vec<Tensor<f32>>,
    pub(crate) v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new(params: &[&Tensor<f32>]) -> Self {
        Adam {
            t: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, cfg: &OptimConfig, params: Vec<&mut Tensor<f32>>, grads: &[Tensor<f32>]) -> Result<()> {
        ensure!(
            params.len() == grads.len() && params.len() == self.m.len(),
            "optimizer got {} params and {} grads for {} slots",
            params.len(),
            grads.len(),
            self.m.len()
        );
        let lr = cfg.lr_at(self.t);
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let (b1, b2, eps) = (cfg.beta1 as f32, cfg.beta2 as f32, cfg.eps as f32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ensure!(p.shape() == g.shape(), "gradient shape mismatch");
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *pi -= step_size * *mi / (vi.sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = OptimConfig::default();
        let mut p = Tensor::<f32>::full(&[3], 1.0);
        let mut adam = Adam::new(&[&p]);
        let g = Tensor::from_vec(&[3], vec![0.5f32, -2.0, 0.0]).unwrap();
        adam.step(&cfg, vec![&mut p], &[g]).unwrap();
        assert!((p.data()[0] - (1.0 - 2e-4)).abs() < 1e-7);
        assert!((p.data()[1] - (1.0 + 2e-4)).abs() < 1e-7);
        assert_eq!(p.data()[2], 1.0);
    }

    #[test]
    fn linear_decay_schedule() {
        let cfg = OptimConfig {
            decay_start: Some(100),
            decay_end: 200,
            ..OptimConfig::default()
        };
        assert_eq!(cfg.lr_at(50), 2e-4);
        assert!((cfg.lr_at(150) - 1e-4).abs() < 1e-12);
        assert_eq!(cfg.lr_at(250), 0.0);
    }
}
