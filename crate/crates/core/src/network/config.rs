use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which intermediate signals enter the deep-supervision loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupervisionStrategy {
    /// Final prediction only.
    OutputOnly,
    /// Backbone stage heads plus the final prediction.
    BackbonePlusOutput,
    /// Backbone heads, the attention maps themselves, and the final prediction.
    #[serde(alias = "sam")]
    BackbonePlusAttentionMap,
    /// Backbone heads, heads on the refined features, and the final prediction.
    #[default]
    #[serde(alias = "saf")]
    BackbonePlusAttentiveFeature,
}

impl SupervisionStrategy {
    pub const ALL: [SupervisionStrategy; 4] = [
        SupervisionStrategy::OutputOnly,
        SupervisionStrategy::BackbonePlusOutput,
        SupervisionStrategy::BackbonePlusAttentionMap,
        SupervisionStrategy::BackbonePlusAttentiveFeature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SupervisionStrategy::OutputOnly => "output-only",
            SupervisionStrategy::BackbonePlusOutput => "backbone-plus-output",
            SupervisionStrategy::BackbonePlusAttentionMap => "backbone-plus-attention-map",
            SupervisionStrategy::BackbonePlusAttentiveFeature => "backbone-plus-attentive-feature",
        }
    }

    pub fn uses_backbone(self) -> bool {
        !matches!(self, SupervisionStrategy::OutputOnly)
    }

    /// Source of the second group of stage signals, if any.
    pub fn refine_signal(self) -> Option<RefineSignal> {
        match self {
            SupervisionStrategy::BackbonePlusAttentionMap => Some(RefineSignal::AttentionMap),
            SupervisionStrategy::BackbonePlusAttentiveFeature => Some(RefineSignal::RefinedFeature),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefineSignal {
    AttentionMap,
    RefinedFeature,
}

impl fmt::Display for SupervisionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SupervisionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "output-only" => Ok(SupervisionStrategy::OutputOnly),
            "backbone-plus-output" | "backbone-output" => Ok(SupervisionStrategy::BackbonePlusOutput),
            "backbone-plus-attention-map" | "sam" => Ok(SupervisionStrategy::BackbonePlusAttentionMap),
            "backbone-plus-attentive-feature" | "saf" => Ok(SupervisionStrategy::BackbonePlusAttentiveFeature),
            other => Err(Error::config(format!(
                "unknown supervision strategy `{other}` (expected output-only, backbone-plus-output, sam or saf)"
            ))),
        }
    }
}

/// Architecture hyperparameters. Channel counts are given at full width and
/// multiplied by `channel_scale` when the model is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_channels: Vec<usize>,
    /// Decoder block widths, deepest level first.
    pub decoder_channels: Vec<usize>,
    pub stage_head_channels: usize,
    pub n_stages: usize,
    pub attention_kernel_sizes: Vec<usize>,
    pub attention_group_width: usize,
    pub attention_enabled: bool,
    /// The two mixed-kernel layers of an attention module reuse one set of
    /// convolution weights; normalization and activation stay per layer.
    pub attention_shared_weights: bool,
    pub merge_channels: usize,
    /// Concatenate backbone stage features next to the refined ones before
    /// the final merge.
    pub merge_includes_backbone: bool,
    pub supervision_strategy: SupervisionStrategy,
    pub channel_scale: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub prelu_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_channels: vec![16, 32, 64, 128, 128],
            decoder_channels: vec![64, 32, 16, 16],
            stage_head_channels: 16,
            n_stages: 4,
            attention_kernel_sizes: vec![3, 5, 7, 9],
            attention_group_width: 4,
            attention_enabled: true,
            attention_shared_weights: true,
            merge_channels: 16,
            merge_includes_backbone: false,
            supervision_strategy: SupervisionStrategy::default(),
            channel_scale: 1.0,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            prelu_init: 0.25,
        }
    }
}

/// Channel counts after scaling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Widths {
    pub encoder: Vec<usize>,
    /// Indexed by level, shallowest first; one entry per level below the deepest.
    pub decoder: Vec<usize>,
    pub head: usize,
    pub group: usize,
    pub merge: usize,
}

impl ModelConfig {
    /// The desk-scale model used for smoke tests and phantom experiments.
    pub fn desk() -> Self {
        ModelConfig {
            channel_scale: 0.25,
            ..ModelConfig::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.encoder_channels.len()
    }

    fn scale(&self, c: usize) -> usize {
        ((c as f64 * self.channel_scale).round() as usize).max(1)
    }

    /// Validates the configuration and returns the scaled channel counts.
    pub fn widths(&self) -> Result<Widths> {
        let levels = self.levels();
        if levels < 2 {
            return Err(Error::config("encoder_channels needs at least two levels"));
        }
        if self.decoder_channels.len() != levels - 1 {
            return Err(Error::config(format!(
                "decoder_channels has {} entries, expected {}",
                self.decoder_channels.len(),
                levels - 1
            )));
        }
        if self.n_stages == 0 || self.n_stages > levels - 1 {
            return Err(Error::config(format!(
                "n_stages = {} must lie in 1..={}",
                self.n_stages,
                levels - 1
            )));
        }
        if !(self.channel_scale > 0.0 && self.channel_scale.is_finite()) {
            return Err(Error::config("channel_scale must be positive"));
        }
        if self.attention_kernel_sizes.is_empty() {
            return Err(Error::config("attention_kernel_sizes is empty"));
        }
        for &k in &self.attention_kernel_sizes {
            if !matches!(k, 1 | 3 | 5 | 7 | 9) {
                return Err(Error::config(format!("attention kernel size {k} not in {{1,3,5,7,9}}")));
            }
        }
        if self.attention_group_width * self.attention_kernel_sizes.len() != self.stage_head_channels {
            return Err(Error::config(format!(
                "attention_group_width {} x {} kernels != stage_head_channels {}",
                self.attention_group_width,
                self.attention_kernel_sizes.len(),
                self.stage_head_channels
            )));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::config("bn_eps must be positive"));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::config("bn_momentum must lie in (0, 1)"));
        }
        if !self.prelu_init.is_finite() {
            return Err(Error::config("prelu_init must be finite"));
        }
        if self.encoder_channels.iter().chain(&self.decoder_channels).any(|&c| c == 0) || self.merge_channels == 0 {
            return Err(Error::config("channel counts must be positive"));
        }
        let group = self.scale(self.attention_group_width);
        let widths = Widths {
            encoder: self.encoder_channels.iter().map(|&c| self.scale(c)).collect(),
            decoder: self.decoder_channels.iter().rev().map(|&c| self.scale(c)).collect(),
            head: group * self.attention_kernel_sizes.len(),
            group,
            merge: self.scale(self.merge_channels),
        };
        Ok(widths)
    }

    /// Spatial extents must survive `levels - 1` halvings.
    pub fn check_input(&self, spatial: [usize; 3]) -> Result<()> {
        let f = 1usize << (self.levels() - 1);
        if spatial.iter().any(|&s| s == 0 || s % f != 0) {
            return Err(Error::config(format!(
                "patch extent {spatial:?} is not divisible by {f}"
            )));
        }
        Ok(())
    }
}
