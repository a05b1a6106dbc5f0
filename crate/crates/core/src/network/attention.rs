//! Stage-wise attention refinement with mixed-kernel group convolutions.

use cpseg_tensor::{Scalar, Var};
use rand::Rng;

use super::layers::{BatchNorm, Conv, Ctx, Init, Prelu};
use crate::error::{Error, Result};

/// Normalization applied to the gated and the skip branch before they are
/// summed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchNorm {
    Learned,
    /// Both branches pass through unchanged.
    Identity,
}

/// One mixed-kernel layer: the channels are split into equal groups, each
/// group convolved with its own kernel size, then concatenated back.
#[derive(Clone, Debug)]
struct MixedLayer {
    convs: Vec<Conv>,
    norms: Vec<BatchNorm>,
    acts: Vec<Prelu>,
}

impl MixedLayer {
    fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var, group: usize) -> Result<Var> {
        let mut parts = Vec::with_capacity(self.convs.len());
        for (g, ((conv, bn), act)) in self.convs.iter().zip(&self.norms).zip(&self.acts).enumerate() {
            let xg = cx.graph.slice_channels(x, g * group, group)?;
            let y = conv.forward(cx, xg)?;
            let y = bn.forward(cx, y)?;
            parts.push(act.forward(cx, y)?);
        }
        Ok(cx.graph.concat(&parts)?)
    }
}

#[derive(Clone, Debug)]
pub struct AttentionModule {
    layers: [MixedLayer; 2],
    gate: Conv,
    norm_gated: BatchNorm,
    norm_skip: BatchNorm,
    group: usize,
    channels: usize,
}

impl AttentionModule {
    pub fn new<T: Scalar, R: Rng>(
        init: &mut Init<'_, T, R>,
        path: &str,
        kernels: &[usize],
        group: usize,
        shared_weights: bool,
    ) -> Result<Self> {
        if kernels.is_empty() || group == 0 {
            return Err(Error::config("attention module needs at least one group of width >= 1"));
        }
        let channels = group * kernels.len();
        let convs_for = |init: &mut Init<'_, T, R>, prefix: &str| -> Result<Vec<Conv>> {
            kernels
                .iter()
                .enumerate()
                .map(|(g, &k)| Conv::new(init, &format!("{prefix}.group{g}.conv"), group, group, k))
                .collect()
        };
        let first_convs = convs_for(init, &format!("{path}.layer0"))?;
        let second_convs = if shared_weights {
            first_convs.clone()
        } else {
            convs_for(init, &format!("{path}.layer1"))?
        };
        let layer = |init: &mut Init<'_, T, R>, l: usize, convs: Vec<Conv>| -> Result<MixedLayer> {
            let mut norms = Vec::new();
            let mut acts = Vec::new();
            for g in 0..kernels.len() {
                norms.push(BatchNorm::new(init, &format!("{path}.layer{l}.group{g}.bn"), group)?);
                acts.push(Prelu::new(init, &format!("{path}.layer{l}.group{g}.act"), group)?);
            }
            Ok(MixedLayer { convs, norms, acts })
        };
        let layers = [layer(init, 0, first_convs)?, layer(init, 1, second_convs)?];
        Ok(AttentionModule {
            layers,
            gate: Conv::new(init, &format!("{path}.gate"), channels, 1, 1)?,
            norm_gated: BatchNorm::new(init, &format!("{path}.gated_bn"), channels)?,
            norm_skip: BatchNorm::new(init, &format!("{path}.skip_bn"), channels)?,
            group,
            channels,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// The attention map `A` in (0, 1), one channel.
    pub fn gate_map<T: Scalar>(&self, cx: &mut Ctx<'_, T>, f: Var) -> Result<Var> {
        let c = cx.graph.shape(f).get(1).copied().unwrap_or(0);
        if c != self.channels {
            return Err(cpseg_tensor::TensorError::ShapeMismatch {
                op: "attention_module",
                dim: "channels",
                expected: self.channels,
                got: c,
            }
            .into());
        }
        let mut h = f;
        for layer in &self.layers {
            h = layer.forward(cx, h, self.group)?;
        }
        let logits = self.gate.forward(cx, h)?;
        Ok(cx.graph.sigmoid(logits))
    }

    /// `norm(A * F) + norm(F)`.
    pub fn combine<T: Scalar>(&self, cx: &mut Ctx<'_, T>, f: Var, a: Var, norm: BranchNorm) -> Result<Var> {
        let gated = cx.graph.gate(f, a)?;
        let (gated, skip) = match norm {
            BranchNorm::Learned => (self.norm_gated.forward(cx, gated)?, self.norm_skip.forward(cx, f)?),
            BranchNorm::Identity => (gated, f),
        };
        Ok(cx.graph.add(gated, skip)?)
    }

    /// Returns the refined features and the attention map.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, f: Var) -> Result<(Var, Var)> {
        let a = self.gate_map(cx, f)?;
        let refined = self.combine(cx, f, a, BranchNorm::Learned)?;
        Ok((refined, a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cpseg_tensor::{Graph, ParameterStore, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(shared: bool, store: &mut ParameterStore<f64>) -> AttentionModule {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut init = Init {
            store,
            rng: &mut rng,
            prelu_slope: 0.25,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        };
        AttentionModule::new(&mut init, "att", &[3, 5, 7, 9], 4, shared).unwrap()
    }

    #[test]
    fn parameter_counts_for_both_layouts() {
        let mut shared = ParameterStore::new();
        build(true, &mut shared);
        let mut separate = ParameterStore::new();
        build(false, &mut separate);
        // per kernel size k: 16 k^3 weights + 4 biases
        let convs: usize = [3usize, 5, 7, 9].iter().map(|k| 16 * k * k * k + 4).sum();
        // two layers of BN (gamma, beta) and PReLU over 16 channels, the
        // gate conv, and the two branch norms
        let rest = 2 * (16 * 2 + 16) + 17 + 2 * 32;
        assert_eq!(shared.learnable_count(), convs + rest);
        assert_eq!(separate.learnable_count(), 2 * convs + rest);
    }

    #[test]
    fn constant_gate_with_identity_norm_scales_features() {
        let mut store = ParameterStore::new();
        let module = build(true, &mut store);
        let f = Tensor::from_fn([1, 16, 2, 2, 2], |i| ((i * 7919) % 97) as f64 / 13.0 - 3.0);
        for c in [0.0, 0.5, 1.0] {
            let mut g = Graph::new();
            let fv = g.input(f.clone(), false);
            let a = g.constant(Tensor::full([1, 1, 2, 2, 2], c));
            let out = module
                .combine(&mut Ctx::new(&mut g, &mut store, false), fv, a, BranchNorm::Identity)
                .unwrap();
            for (y, x) in g.value(out).data().iter().zip(f.data()) {
                assert_eq!(*y, (1.0 + c) * x);
            }
        }
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let mut store = ParameterStore::new();
        let module = build(true, &mut store);
        let mut g = Graph::new();
        let fv = g.input(Tensor::full([1, 8, 2, 2, 2], 1.0), false);
        assert!(module.forward(&mut Ctx::new(&mut g, &mut store, false), fv).is_err());
    }
}
