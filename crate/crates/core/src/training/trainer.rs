use std::fmt::Write as _;
use std::sync::Arc;

use cpseg_tensor::{Graph, ParameterStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::augment::Transform;
use super::config::TrainConfig;
use super::loss::{alpha_for_batch, signal_names, total_loss};
use super::sampler::{Batch, BatchSource};
use super::schedule::lr_at;
use crate::error::{Error, Result};
use crate::network::{Ctx, Network};

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: u64,
    pub lr: f64,
    pub total: f64,
    pub signals: Vec<f64>,
}

/// One record per iteration, with the active signal names as columns.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTrace {
    pub signal_names: Vec<String>,
    pub records: Vec<LossRecord>,
}

impl LossTrace {
    pub fn header(&self) -> String {
        let mut h = String::from("iter,lr,total_loss");
        for name in &self.signal_names {
            h.push(',');
            h.push_str(name);
        }
        h
    }

    pub fn row(record: &LossRecord) -> String {
        let mut r = format!("{},{},{}", record.iter, record.lr, record.total);
        for v in &record.signals {
            let _ = write!(r, ",{v}");
        }
        r
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for rec in &self.records {
            out.push_str(&LossTrace::row(rec));
            out.push('\n');
        }
        out
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.total)
    }
}

/// Callbacks invoked by [`train`].
pub trait TrainHooks {
    fn record(&mut self, _record: &LossRecord) -> Result<()> {
        Ok(())
    }

    /// Called every `checkpoint_every` iterations and after the last one,
    /// with the number of completed iterations.
    fn checkpoint(&mut self, _iters_done: u64, _store: &ParameterStore<f32>) -> Result<()> {
        Ok(())
    }
}

impl TrainHooks for () {}

/// Stream ids of the per-iteration random generators.
const SAMPLE_STREAM: u64 = 0;
const AUGMENT_STREAM: u64 = 1;

fn iteration_rng(seed: u64, iter: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter.wrapping_mul(2).wrapping_add(stream));
    rng
}

fn augment(batch: Batch, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Batch> {
    if !cfg.augment_flips && !cfg.augment_rotations {
        return Ok(batch);
    }
    let s = batch.patch_size();
    let vol = s * s * s;
    let shape = batch.image.shape().to_vec();
    let mut image = Vec::with_capacity(batch.image.numel());
    let mut label = Vec::with_capacity(batch.label.numel());
    for i in 0..batch.len() {
        let t = Transform::random(rng, cfg.augment_rotations, cfg.augment_flips);
        image.extend(t.apply(&batch.image.data()[i * vol..(i + 1) * vol], s));
        label.extend(t.apply(&batch.label.data()[i * vol..(i + 1) * vol], s));
    }
    Ok(Batch {
        image: Tensor::new(shape.clone(), image)?,
        label: Tensor::new(shape, label)?,
    })
}

/// Runs `cfg.total_iters` optimizer steps. On a non-finite loss or gradient
/// the store is left at its last good state and an error is returned.
pub fn train(
    net: &Network,
    store: &mut ParameterStore<f32>,
    source: &dyn BatchSource,
    cfg: &TrainConfig,
    hooks: &mut dyn TrainHooks,
) -> Result<LossTrace> {
    cfg.validate()?;
    let strategy = net.config().supervision_strategy;
    let mut trace = LossTrace {
        signal_names: signal_names(strategy, net.config().n_stages),
        records: Vec::with_capacity(cfg.total_iters as usize),
    };
    let mut adam = Adam::new(store, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    for iter in 0..cfg.total_iters {
        let batch = source.batch(iter, &mut iteration_rng(cfg.seed, iter, SAMPLE_STREAM))?;
        let batch = augment(batch, cfg, &mut iteration_rng(cfg.seed, iter, AUGMENT_STREAM))?;
        let alpha = alpha_for_batch(&batch.label, cfg.alpha_policy);
        let target = Arc::new(batch.label);

        let mut graph = Graph::new();
        let x = graph.input(batch.image, false);
        // running statistics are updated during the forward pass, so work
        // on a copy until the step is known to be finite
        let mut next = store.clone();
        let outputs = net.forward(&mut Ctx::new(&mut graph, &mut next, true), x)?;
        let terms = total_loss(&mut graph, &outputs, &target, alpha, strategy, cfg)?;
        let total = graph.value(terms.total).item() as f64;
        let signals: Vec<f64> = terms.signals.iter().map(|&(_, v)| graph.value(v).item() as f64).collect();
        if !total.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at iteration {iter}")));
        }
        next.zero_grad();
        graph.backward(terms.total, Some(&mut next))?;
        drop(graph);
        let lr = lr_at(iter, cfg);
        adam.step(&mut next, lr, cfg.weight_decay)
            .map_err(|e| Error::Numerical(format!("iteration {iter}: {e}")))?;
        *store = next;

        let record = LossRecord {
            iter,
            lr,
            total,
            signals,
        };
        hooks.record(&record)?;
        trace.records.push(record);
        let done = iter + 1;
        if done == cfg.total_iters || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
            hooks.checkpoint(done, store)?;
        }
    }
    Ok(trace)
}
