use cpseg_tensor::{ParameterStore, Scalar, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::AttentionModule;
use super::config::{ModelConfig, RefineSignal, Widths};
use super::layers::{Conv, ConvBnPrelu, Ctx, Init, ResidualBlock, SupervisionHead};
use crate::error::{Error, Result};

/// Graph handles for everything one forward pass emits. Stage lists are
/// ordered from stage 1, the highest-resolution decoder stage.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    pub final_prob: Var,
    pub backbone_probs: Vec<Var>,
    pub refine_probs: Vec<Var>,
    /// Empty when attention is disabled.
    pub attention_maps: Vec<Var>,
    pub stage_features: Vec<Var>,
    pub refined_features: Vec<Var>,
}

impl ForwardOutputs {
    /// Probability maps available for supervision: stage heads on the
    /// backbone, stage heads on the refined features, and the final output.
    pub fn signal_count(&self) -> usize {
        self.backbone_probs.len() + self.refine_probs.len() + 1
    }

    /// The second group of stage signals for a refine-signal source.
    pub fn refine_signals(&self, source: RefineSignal) -> &[Var] {
        match source {
            RefineSignal::AttentionMap => &self.attention_maps,
            RefineSignal::RefinedFeature => &self.refine_probs,
        }
    }
}

/// The residual encoder-decoder with stage heads, attention refinement,
/// deep-supervision heads and the final merge.
#[derive(Clone, Debug)]
pub struct Network {
    config: ModelConfig,
    widths: Widths,
    encoder: Vec<ResidualBlock>,
    /// Indexed by level, shallowest first.
    decoder: Vec<ResidualBlock>,
    stage_heads: Vec<Conv>,
    backbone_heads: Vec<SupervisionHead>,
    refine_heads: Vec<SupervisionHead>,
    attention: Vec<AttentionModule>,
    merge: [ConvBnPrelu; 2],
    output_head: SupervisionHead,
}

/// Path prefix of every attention-module parameter.
pub const ATTENTION_PREFIX: &str = "attention.";

impl Network {
    /// Builds the network and a freshly initialized parameter store.
    pub fn new<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<(Network, ParameterStore<T>)> {
        let mut store = ParameterStore::new();
        let net = Network::build(config, &mut store, seed)?;
        Ok((net, store))
    }

    /// Registers all parameters in `store`. Registration order and paths
    /// depend only on the configuration.
    pub fn build<T: Scalar>(config: &ModelConfig, store: &mut ParameterStore<T>, seed: u64) -> Result<Network> {
        let widths = config.widths()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store,
            rng: &mut rng,
            prelu_slope: config.prelu_init,
            bn_eps: config.bn_eps,
            bn_momentum: config.bn_momentum,
        };
        let levels = config.levels();
        let n = config.n_stages;

        let mut encoder = Vec::with_capacity(levels);
        let mut cin = 1;
        for (l, &c) in widths.encoder.iter().enumerate() {
            encoder.push(ResidualBlock::new(&mut init, &format!("encoder.{l}"), cin, c)?);
            cin = c;
        }

        // deepest level first so that each block knows its upsampled input width
        let mut decoder = Vec::with_capacity(levels - 1);
        let mut below = widths.encoder[levels - 1];
        for l in (0..levels - 1).rev() {
            let c = widths.decoder[l];
            decoder.push(ResidualBlock::new(
                &mut init,
                &format!("decoder.{l}"),
                below + widths.encoder[l],
                c,
            )?);
            below = c;
        }
        decoder.reverse();

        let head = widths.head;
        let mut stage_heads = Vec::with_capacity(n);
        let mut backbone_heads = Vec::with_capacity(n);
        let mut refine_heads = Vec::with_capacity(n);
        let mut attention = Vec::new();
        for s in 0..n {
            stage_heads.push(Conv::new(&mut init, &format!("stage_head.{s}"), widths.decoder[s], head, 1)?);
        }
        for s in 0..n {
            backbone_heads.push(SupervisionHead::new(&mut init, &format!("backbone_head.{s}"), head)?);
        }
        if config.attention_enabled {
            for s in 0..n {
                attention.push(AttentionModule::new(
                    &mut init,
                    &format!("{ATTENTION_PREFIX}{s}"),
                    &config.attention_kernel_sizes,
                    widths.group,
                    config.attention_shared_weights,
                )?);
            }
        } else if config.supervision_strategy.refine_signal() == Some(RefineSignal::AttentionMap) {
            return Err(Error::config("attention-map supervision requires attention_enabled"));
        }
        for s in 0..n {
            refine_heads.push(SupervisionHead::new(&mut init, &format!("refine_head.{s}"), head)?);
        }

        let merged = head * n * if config.merge_includes_backbone { 2 } else { 1 };
        let merge = [
            ConvBnPrelu::new(&mut init, "merge.0", merged, widths.merge, 3)?,
            ConvBnPrelu::new(&mut init, "merge.1", widths.merge, widths.merge, 3)?,
        ];
        let output_head = SupervisionHead::new(&mut init, "output_head", widths.merge)?;

        Ok(Network {
            config: config.clone(),
            widths,
            encoder,
            decoder,
            stage_heads,
            backbone_heads,
            refine_heads,
            attention,
            merge,
            output_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn widths(&self) -> &Widths {
        &self.widths
    }

    pub fn attention_modules(&self) -> &[AttentionModule] {
        &self.attention
    }

    /// The same network with its attention modules bypassed; refined
    /// features become the stage features.
    pub fn without_attention(&self) -> Network {
        let mut net = self.clone();
        net.config.attention_enabled = false;
        net.attention.clear();
        net
    }

    fn input_extent<T: Scalar>(&self, cx: &Ctx<'_, T>, x: Var) -> Result<[usize; 3]> {
        let shape = cx.graph.shape(x);
        if shape.len() != 5 || shape[1] != 1 {
            return Err(Error::data(format!("expected an (N,1,D,H,W) patch, got {shape:?}")));
        }
        let spatial = [shape[2], shape[3], shape[4]];
        self.config.check_input(spatial)?;
        Ok(spatial)
    }

    /// Stage features at input resolution, stage 1 first.
    pub fn backbone_forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Vec<Var>> {
        let spatial = self.input_extent(cx, x)?;
        let levels = self.encoder.len();

        let mut skips = Vec::with_capacity(levels);
        let mut h = x;
        for (l, block) in self.encoder.iter().enumerate() {
            if l > 0 {
                h = cx.graph.max_pool2(h)?;
            }
            h = block.forward(cx, h)?;
            skips.push(h);
        }

        let mut decoded = vec![h; levels - 1];
        for l in (0..levels - 1).rev() {
            let skip = skips[l];
            let s = cx.graph.shape(skip);
            let up = cx.graph.upsample(h, [s[2], s[3], s[4]])?;
            let cat = cx.graph.concat(&[up, skip])?;
            h = self.decoder[l].forward(cx, cat)?;
            decoded[l] = h;
        }

        let mut stages = Vec::with_capacity(self.stage_heads.len());
        for (s, head) in self.stage_heads.iter().enumerate() {
            let f = head.forward(cx, decoded[s])?;
            let f = if cx.graph.shape(f)[2..] != spatial[..] {
                cx.graph.upsample(f, spatial)?
            } else {
                f
            };
            stages.push(f);
        }
        Ok(stages)
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<ForwardOutputs> {
        let stage_features = self.backbone_forward(cx, x)?;

        let mut backbone_probs = Vec::with_capacity(stage_features.len());
        for (head, &f) in self.backbone_heads.iter().zip(&stage_features) {
            backbone_probs.push(head.forward(cx, f)?);
        }

        let mut refined_features = Vec::with_capacity(stage_features.len());
        let mut attention_maps = Vec::new();
        if self.config.attention_enabled {
            for (module, &f) in self.attention.iter().zip(&stage_features) {
                let (refined, a) = module.forward(cx, f)?;
                refined_features.push(refined);
                attention_maps.push(a);
            }
        } else {
            refined_features.clone_from(&stage_features);
        }

        let mut refine_probs = Vec::with_capacity(stage_features.len());
        for (head, &f) in self.refine_heads.iter().zip(&refined_features) {
            refine_probs.push(head.forward(cx, f)?);
        }

        let mut merged = refined_features.clone();
        if self.config.merge_includes_backbone {
            merged.extend(&stage_features);
        }
        let h = cx.graph.concat(&merged)?;
        let h = self.merge[0].forward(cx, h)?;
        let h = self.merge[1].forward(cx, h)?;
        let final_prob = self.output_head.forward(cx, h)?;

        Ok(ForwardOutputs {
            final_prob,
            backbone_probs,
            refine_probs,
            attention_maps,
            stage_features,
            refined_features,
        })
    }
}

/// Number of learnable scalars; running statistics are excluded.
pub fn param_count<T: Scalar>(store: &ParameterStore<T>) -> usize {
    store.learnable_count()
}

/// Learnable scalars that belong to attention modules.
pub fn attention_param_count<T: Scalar>(store: &ParameterStore<T>) -> usize {
    store.learnable_count_with_prefix(ATTENTION_PREFIX)
}
