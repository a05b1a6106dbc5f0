//! Sliding-window prediction over whole volumes.

use std::time::Instant;

use cpseg_tensor::{Graph, ParameterStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{binarize, extract_patches, fuse_predictions, normalize, Image, Mask, PatchGrid};
use crate::error::{Error, Result};
use crate::network::{Ctx, Network};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub patch_size: usize,
    pub stride: usize,
    /// Patches per forward pass.
    pub batch_size: usize,
    pub threshold: f32,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            patch_size: 64,
            stride: 32,
            batch_size: 1,
            threshold: 0.5,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("inference batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::config(format!("threshold {} outside [0, 1)", self.threshold)));
        }
        PatchGrid::new([self.patch_size; 3], self.patch_size, self.stride)?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub probability: Image,
    pub mask: Mask,
    /// Wall-clock time from normalization to the binary mask.
    pub seconds: f64,
}

/// Normalizes `image`, runs the network in evaluation mode on every patch of
/// the grid, averages overlapping predictions and thresholds the result.
pub fn predict_volume(net: &Network, store: &ParameterStore<f32>, image: &Image, cfg: &InferenceConfig) -> Result<Prediction> {
    cfg.validate()?;
    let start = Instant::now();
    let normalized = normalize(image);
    let grid = PatchGrid::for_volume(&normalized, cfg.patch_size, cfg.stride)?;
    let patches = extract_patches(&normalized, &grid);
    let p = cfg.patch_size;
    let voxels = p * p * p;

    // Evaluation mode never writes to the store; the context wants it mutable.
    let mut store = store.clone();
    let mut probs = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(cfg.batch_size) {
        let n = chunk.len();
        let data: Vec<f32> = chunk.iter().flatten().copied().collect();
        let mut graph = Graph::inference();
        let x = graph.input(Tensor::new(vec![n, 1, p, p, p], data)?, false);
        let out = net.forward(&mut Ctx::new(&mut graph, &mut store, false), x)?;
        let y = graph.value(out.final_prob).data();
        probs.extend(y.chunks(voxels).map(<[f32]>::to_vec));
    }

    let probability = fuse_predictions(&grid, &probs, &normalized)?;
    if probability.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite probability in fused prediction".into()));
    }
    let mask = binarize(&probability, cfg.threshold);
    Ok(Prediction {
        probability,
        mask,
        seconds: start.elapsed().as_secs_f64(),
    })
}
