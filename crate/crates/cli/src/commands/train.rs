use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cpseg::data::Split;
use cpseg::network::{param_count, save_checkpoint, Checkpoint, ModelConfig, Network};
use cpseg::training::{signal_names, train, LossRecord, LossTrace, PatchSampler, TrainHooks};
use cpseg_tensor::ParameterStore;

use super::phantom::DatasetManifest;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::TrainArgs;

pub const LOSS_TRACE: &str = "loss_trace.csv";
pub const MODEL: &str = "model.ckpt";
pub const PERIODIC: &str = "checkpoint.ckpt";
pub const LAST_GOOD: &str = "last_good.ckpt";

struct Hooks<'a> {
    trace: BufWriter<File>,
    trace_path: PathBuf,
    out: &'a Path,
    model: &'a ModelConfig,
    seed: u64,
    total: u64,
    done: u64,
    started: Instant,
}

impl Hooks<'_> {
    fn save(&self, name: &str, iteration: u64, store: &ParameterStore<f32>) -> cpseg::Result<()> {
        let ckpt = Checkpoint::new(self.model, self.seed, iteration, store.clone());
        save_checkpoint(&ckpt, &self.out.join(name))
    }
}

impl TrainHooks for Hooks<'_> {
    fn record(&mut self, r: &LossRecord) -> cpseg::Result<()> {
        // flushed per row so the trace survives an aborted run
        writeln!(self.trace, "{}", LossTrace::row(r))
            .and_then(|_| self.trace.flush())
            .map_err(|e| cpseg::Error::Io { path: self.trace_path.clone(), source: e })?;
        self.done = r.iter + 1;
        let step = (self.total / 20).max(1);
        if self.done % step == 0 || self.done == self.total {
            eprintln!(
                "iter {:>6}/{} lr {:.1e} loss {:.5} ({:.0}s)",
                self.done,
                self.total,
                r.lr,
                r.total,
                self.started.elapsed().as_secs_f64()
            );
        }
        Ok(())
    }

    fn checkpoint(&mut self, done: u64, store: &ParameterStore<f32>) -> cpseg::Result<()> {
        self.save(PERIODIC, done, store)
    }
}

pub fn run(cfg: &RunConfig, args: &TrainArgs, out: &Path) -> CliResult<()> {
    let manifest = DatasetManifest::load(&args.data)?;
    let mut cases = Vec::new();
    for case in manifest.split(Split::Train) {
        cases.push(case.load(&args.data)?);
    }
    if cases.is_empty() {
        return Err(CliError::data(format!("{}: no training cases", args.data.display())));
    }
    let sampler = PatchSampler::new(cases, cfg.train.patch_size, cfg.train.batch_size, cfg.train.foreground_fraction)?;
    let (net, mut store) = Network::new::<f32>(&cfg.model, cfg.seed)?;
    eprintln!(
        "training {} ({} parameters) for {} iterations",
        cfg.model.supervision_strategy.name(),
        param_count(&store),
        cfg.train.total_iters
    );
    cfg.write_next_to(out)?;

    let trace_path = out.join(LOSS_TRACE);
    let file = OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .open(&trace_path)
        .map_err(|e| CliError::io(&trace_path, e))?;
    let mut trace = BufWriter::new(file);
    let header = LossTrace {
        signal_names: signal_names(cfg.model.supervision_strategy, cfg.model.n_stages),
        records: Vec::new(),
    }
    .header();
    writeln!(trace, "{header}").map_err(|e| CliError::io(&trace_path, e))?;

    let mut hooks = Hooks {
        trace,
        trace_path,
        out,
        model: &cfg.model,
        seed: cfg.seed,
        total: cfg.train.total_iters,
        done: 0,
        started: Instant::now(),
    };
    match train(&net, &mut store, &sampler, &cfg.train, &mut hooks) {
        Ok(_) => {
            hooks.save(MODEL, cfg.train.total_iters, &store)?;
            eprintln!("wrote {}", out.join(MODEL).display());
            Ok(())
        }
        Err(e @ cpseg::Error::Numerical(_)) => {
            // the store still holds the parameters after the last finite step
            hooks.save(LAST_GOOD, hooks.done, &store)?;
            Err(CliError::numerical(format!(
                "{e}; parameters after {} good iterations saved to {}",
                hooks.done,
                out.join(LAST_GOOD).display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}
