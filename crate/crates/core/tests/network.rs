use std::sync::Arc;

use cpseg::network::{attention_param_count, param_count, Ctx, ModelConfig, Network};
use cpseg_tensor::{Graph, ParamKind, ParameterStore, Tensor};

fn patch(n: usize, s: usize, seed: u64) -> Tensor<f32> {
    let mut state = seed;
    Tensor::from_fn([n, 1, s, s, s], |_| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
    })
}

#[test]
fn default_parameter_budget() {
    let (_, full) = Network::new::<f32>(&ModelConfig::default(), 0).unwrap();
    let total = param_count(&full);
    let attention = attention_param_count(&full);
    let dsr_cfg = ModelConfig {
        attention_enabled: false,
        ..ModelConfig::default()
    };
    let (_, dsr) = Network::new::<f32>(&dsr_cfg, 0).unwrap();
    assert_eq!(param_count(&dsr), total - attention);
    assert!((total as f64 - 2.75e6).abs() <= 0.15 * 2.75e6, "total {total}");
    assert!((attention as f64 - 7.0e4).abs() <= 0.15 * 7.0e4, "attention {attention}");
}

#[test]
fn full_scale_stage_features_have_sixteen_channels() {
    let (net, mut store) = Network::new::<f32>(&ModelConfig::default(), 0).unwrap();
    let mut g = Graph::inference();
    let x = g.input(patch(1, 64, 1), false);
    let stages = net.backbone_forward(&mut Ctx::new(&mut g, &mut store, false), x).unwrap();
    assert_eq!(stages.len(), 4);
    for s in stages {
        assert_eq!(g.shape(s), &[1, 16, 64, 64, 64]);
    }
}

#[test]
fn desk_forward_emits_nine_signals_in_open_interval() {
    let (net, mut store) = Network::new::<f32>(&ModelConfig::desk(), 3).unwrap();
    let mut g = Graph::inference();
    let x = g.input(patch(2, 16, 2), false);
    let out = net.forward(&mut Ctx::new(&mut g, &mut store, false), x).unwrap();
    assert_eq!(out.signal_count(), 9);
    assert_eq!(out.backbone_probs.len(), 4);
    assert_eq!(out.refine_probs.len(), 4);
    assert_eq!(out.attention_maps.len(), 4);
    for &s in &out.stage_features {
        assert_eq!(g.shape(s), &[2, 4, 16, 16, 16]);
    }
    let probs = out
        .backbone_probs
        .iter()
        .chain(&out.refine_probs)
        .chain(&out.attention_maps)
        .chain([&out.final_prob]);
    for &p in probs {
        assert_eq!(g.shape(p), &[2, 1, 16, 16, 16]);
        assert!(g.value(p).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn forward_is_deterministic() {
    let (net, store) = Network::new::<f32>(&ModelConfig::desk(), 4).unwrap();
    let run = || {
        let mut s = store.clone();
        let mut g = Graph::new();
        let x = g.input(patch(2, 16, 5), false);
        let out = net.forward(&mut Ctx::new(&mut g, &mut s, true), x).unwrap();
        g.value(out.final_prob).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn stage_features_respond_to_encoder_weights() {
    let (net, store) = Network::new::<f32>(&ModelConfig::desk(), 6).unwrap();
    let features = |s: &ParameterStore<f32>| {
        let mut s = s.clone();
        let mut g = Graph::inference();
        let x = g.input(patch(1, 16, 7), false);
        let stages = net.backbone_forward(&mut Ctx::new(&mut g, &mut s, false), x).unwrap();
        stages.iter().map(|&v| g.value(v).clone()).collect::<Vec<_>>()
    };
    let before = features(&store);
    let mut perturbed = store.clone();
    let id = perturbed.id("encoder.0.branch.0.conv.weight").unwrap();
    for v in perturbed.value_mut(id).data_mut() {
        *v += 0.1;
    }
    let after = features(&perturbed);
    for (a, b) in before.iter().zip(&after) {
        assert_ne!(a.data(), b.data());
    }
}

#[test]
fn disabled_attention_ignores_attention_parameters() {
    let (net, store) = Network::new::<f32>(&ModelConfig::desk(), 8).unwrap();
    let bypass = net.without_attention();
    let final_prob = |s: &ParameterStore<f32>| {
        let mut s = s.clone();
        let mut g = Graph::inference();
        let x = g.input(patch(1, 16, 9), false);
        let out = bypass.forward(&mut Ctx::new(&mut g, &mut s, false), x).unwrap();
        assert!(out.attention_maps.is_empty());
        g.value(out.final_prob).clone()
    };
    let before = final_prob(&store);
    let mut perturbed = store.clone();
    let ids: Vec<_> = perturbed.ids().filter(|&id| perturbed.path(id).starts_with("attention.")).collect();
    assert!(!ids.is_empty());
    for id in ids {
        for v in perturbed.value_mut(id).data_mut() {
            *v = *v * 3.0 + 0.5;
        }
    }
    assert_eq!(before.data(), final_prob(&perturbed).data());
}

#[test]
fn every_parameter_receives_gradient() {
    let (net, mut store) = Network::new::<f32>(&ModelConfig::desk(), 10).unwrap();
    let mut g = Graph::new();
    let x = g.input(patch(2, 32, 11), false);
    let target = Arc::new(Tensor::from_fn([2, 1, 32, 32, 32], |i| ((i / 7) % 3 == 0) as u8 as f32));
    let out = net.forward(&mut Ctx::new(&mut g, &mut store, true), x).unwrap();
    let mut terms = Vec::new();
    for &p in out.backbone_probs.iter().chain(&out.refine_probs).chain([&out.final_prob]) {
        terms.push(g.wbce(p, target.clone(), 2.0).unwrap());
    }
    let weights = vec![1.0; terms.len()];
    let loss = g.weighted_sum(&terms, &weights).unwrap();
    g.backward(loss, Some(&mut store)).unwrap();
    let (mut live, mut total) = (0usize, 0usize);
    for (_, e) in store.entries() {
        if e.kind != ParamKind::Learnable {
            continue;
        }
        let grad = e.grad().unwrap();
        total += grad.numel();
        live += grad.data().iter().filter(|v| **v != 0.0).count();
    }
    assert!(live as f64 >= 0.99 * total as f64, "{live} of {total} parameters have gradient");
}
