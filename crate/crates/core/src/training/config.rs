use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the positive-class weight of the weighted cross-entropy is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlphaPolicy {
    /// Negative-to-positive voxel ratio of the mini-batch, clamped.
    Ratio { min: f64, max: f64 },
    Fixed { value: f64 },
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        AlphaPolicy::Ratio { min: 1.0, max: 100.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Iterations at which the learning rate is multiplied by `lr_factor`.
    pub lr_drops: Vec<u64>,
    pub lr_factor: f64,
    pub total_iters: u64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    /// Weights of the backbone stage losses, stage 1 first.
    pub backbone_weights: Vec<f64>,
    /// Weights of the refined-stage (or attention-map) losses.
    pub refine_weights: Vec<f64>,
    pub final_weight: f64,
    pub alpha_policy: AlphaPolicy,
    pub augment_flips: bool,
    pub augment_rotations: bool,
    /// Share of training patches centred on a foreground voxel.
    pub foreground_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Checkpoint period in iterations; 0 keeps only the final one.
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            lr_drops: vec![3000, 4500],
            lr_factor: 0.1,
            total_iters: 6000,
            weight_decay: 1e-4,
            batch_size: 4,
            patch_size: 64,
            backbone_weights: vec![0.8, 0.7, 0.6, 0.5],
            refine_weights: vec![0.8, 0.7, 0.6, 0.5],
            final_weight: 1.0,
            alpha_policy: AlphaPolicy::default(),
            augment_flips: true,
            augment_rotations: true,
            foreground_fraction: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Shortened schedule with the drops kept at the same fractions of the run.
    pub fn rescaled(&self, total_iters: u64) -> TrainConfig {
        let f = total_iters as f64 / self.total_iters as f64;
        TrainConfig {
            total_iters,
            lr_drops: self.lr_drops.iter().map(|&d| (d as f64 * f).round() as u64).collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.lr0) || !positive(self.lr_factor) {
            return Err(Error::config("lr0 and lr_factor must be positive"));
        }
        if self.total_iters == 0 || self.batch_size == 0 || self.patch_size == 0 {
            return Err(Error::config("total_iters, batch_size and patch_size must be positive"));
        }
        if self.lr_drops.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::config("lr_drops must be non-decreasing"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        let weights = self.backbone_weights.iter().chain(&self.refine_weights).chain([&self.final_weight]);
        if weights.into_iter().any(|&w| !positive(w)) {
            return Err(Error::config("loss weights must be positive"));
        }
        if !(0.0..=1.0).contains(&self.foreground_fraction) {
            return Err(Error::config("foreground_fraction must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !positive(self.adam_eps) {
            return Err(Error::config("Adam betas must lie in [0, 1) and eps must be positive"));
        }
        match self.alpha_policy {
            AlphaPolicy::Ratio { min, max } if !(positive(min) && min <= max) => {
                Err(Error::config("alpha ratio bounds must satisfy 0 < min <= max"))
            }
            AlphaPolicy::Fixed { value } if !positive(value) => Err(Error::config("fixed alpha must be positive")),
            _ => Ok(()),
        }
    }
}
