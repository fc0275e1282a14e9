//! Least-squares adversarial loss with a smoothed target.
//!
//! `L_D = mean((D(y) - t)^2) + mean(D(G(x, z))^2)` and
//! `L_G = mean((D(G(x, z)) - t)^2)` with `t = smooth_target` (0.9).

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_SMOOTH_TARGET: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub smooth_target: f64,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            smooth_target: DEFAULT_SMOOTH_TARGET,
            reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.smooth_target > 0.0 && self.smooth_target <= 1.0,
            "smooth_target must lie in (0, 1], got {}",
            self.smooth_target
        );
        Ok(())
    }
}

fn mean_sq_dev<T: Element>(scores: &Tensor<T>, target: f64) -> Result<f64> {
    ensure!(!scores.is_empty(), "score map is empty");
    ensure!(scores.all_finite(), "score map contains non-finite values");
    let sum: f64 = scores
        .data()
        .iter()
        .map(|&s| {
            let d = s.to_f64_lossy() - target;
            d * d
        })
        .sum();
    Ok(sum / scores.len() as f64)
}

fn sq_dev_grad<T: Element>(scores: &Tensor<T>, target: f64) -> Tensor<T> {
    let k = T::from_f64_lossy(2.0 / scores.len() as f64);
    let t = T::from_f64_lossy(target);
    scores.map(|s| k * (s - t))
}

pub fn lsgan_d_loss<T: Element>(
    real_scores: &Tensor<T>,
    fake_scores: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    Ok(mean_sq_dev(real_scores, cfg.smooth_target)? + mean_sq_dev(fake_scores, 0.0)?)
}

pub fn lsgan_g_loss<T: Element>(fake_scores: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    mean_sq_dev(fake_scores, cfg.smooth_target)
}

/// `(d L_D / d real_scores, d L_D / d fake_scores)`.
pub fn lsgan_d_grad<T: Element>(
    real_scores: &Tensor<T>,
    fake_scores: &Tensor<T>,
    cfg: &LossConfig,
) -> (Tensor<T>, Tensor<T>) {
    (
        sq_dev_grad(real_scores, cfg.smooth_target),
        sq_dev_grad(fake_scores, 0.0),
    )
}

pub fn lsgan_g_grad<T: Element>(fake_scores: &Tensor<T>, cfg: &LossConfig) -> Tensor<T> {
    sq_dev_grad(fake_scores, cfg.smooth_target)
}
