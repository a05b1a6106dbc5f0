use std::sync::Arc;

use cpseg_tensor::{Graph, Scalar, Tensor, Var};

use super::config::{AlphaPolicy, TrainConfig};
use crate::error::{Error, Result};
use crate::network::{ForwardOutputs, RefineSignal, SupervisionStrategy};

/// Positive-class weight for a binary target batch.
pub fn alpha_for_batch<T: Scalar>(g: &Tensor<T>, policy: AlphaPolicy) -> f64 {
    match policy {
        AlphaPolicy::Fixed { value } => value,
        AlphaPolicy::Ratio { min, max } => {
            let pos = g.data().iter().filter(|&&v| v > T::zero()).count();
            if pos == 0 {
                return 1.0;
            }
            let neg = g.numel() - pos;
            (neg as f64 / pos as f64).clamp(min, max)
        }
    }
}

/// `-(1/N) sum(alpha g ln p + (1 - g) ln(1 - p))` with `p` clamped away from 0 and 1.
pub fn wbce_loss<T: Scalar>(graph: &mut Graph<T>, p: Var, g: Arc<Tensor<T>>, alpha: f64) -> Result<Var> {
    Ok(graph.wbce(p, g, T::from_f64_lossy(alpha))?)
}

/// The deep-supervision objective and its individual terms.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    /// Named per-signal losses in a fixed order: backbone stages, refined
    /// stages (or attention maps), final.
    pub signals: Vec<(String, Var)>,
}

/// Column names of the supervised signals for a strategy.
pub fn signal_names(strategy: SupervisionStrategy, n_stages: usize) -> Vec<String> {
    let mut names = Vec::new();
    if strategy.uses_backbone() {
        names.extend((1..=n_stages).map(|s| format!("backbone_{s}")));
    }
    match strategy.refine_signal() {
        Some(RefineSignal::RefinedFeature) => names.extend((1..=n_stages).map(|s| format!("refine_{s}"))),
        Some(RefineSignal::AttentionMap) => names.extend((1..=n_stages).map(|s| format!("attention_{s}"))),
        None => {}
    }
    names.push("final".to_string());
    names
}

/// Weighted sum of the per-signal losses selected by `strategy`.
pub fn total_loss<T: Scalar>(
    graph: &mut Graph<T>,
    outputs: &ForwardOutputs,
    g: &Arc<Tensor<T>>,
    alpha: f64,
    strategy: SupervisionStrategy,
    cfg: &TrainConfig,
) -> Result<LossTerms> {
    let n = outputs.backbone_probs.len();
    for (name, w) in [("backbone_weights", &cfg.backbone_weights), ("refine_weights", &cfg.refine_weights)] {
        if w.len() != n {
            return Err(Error::config(format!("{name} has {} entries for {n} stages", w.len())));
        }
    }
    let mut terms: Vec<(String, Var, f64)> = Vec::new();
    if strategy.uses_backbone() {
        for (s, (&p, &w)) in outputs.backbone_probs.iter().zip(&cfg.backbone_weights).enumerate() {
            terms.push((format!("backbone_{}", s + 1), p, w));
        }
    }
    if let Some(source) = strategy.refine_signal() {
        let signals = outputs.refine_signals(source);
        if signals.len() != n {
            return Err(Error::config(format!(
                "strategy {strategy} needs {n} stage signals, the forward pass produced {}",
                signals.len()
            )));
        }
        let prefix = match source {
            RefineSignal::RefinedFeature => "refine",
            RefineSignal::AttentionMap => "attention",
        };
        for (s, (&p, &w)) in signals.iter().zip(&cfg.refine_weights).enumerate() {
            terms.push((format!("{prefix}_{}", s + 1), p, w));
        }
    }
    terms.push(("final".to_string(), outputs.final_prob, cfg.final_weight));

    let mut signals = Vec::with_capacity(terms.len());
    let mut weights = Vec::with_capacity(terms.len());
    for (name, p, w) in terms {
        signals.push((name, wbce_loss(graph, p, g.clone(), alpha)?));
        weights.push(T::from_f64_lossy(w));
    }
    let vars: Vec<Var> = signals.iter().map(|(_, v)| *v).collect();
    let total = graph.weighted_sum(&vars, &weights)?;
    Ok(LossTerms { total, signals })
}
