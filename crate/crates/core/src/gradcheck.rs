//! Finite-difference verification of every differentiable operation and of
//! the network's building blocks, in 64-bit precision.

use std::sync::Arc;

use cpseg_tensor::gradcheck::{check_gradients, FdOptions, TensorCheck};
use cpseg_tensor::{BnMode, Graph, ParamKind, ParameterStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{AttentionModule, Ctx, ForwardOutputs, Init, ResidualBlock, SupervisionHead, SupervisionStrategy};
use crate::training::{total_loss, TrainConfig};

pub const TOLERANCE: f64 = 1e-5;

/// Suites over single tensor operations.
pub const OPS: [&str; 16] = [
    "conv3d",
    "batch_norm_train",
    "batch_norm_eval",
    "prelu",
    "upsample",
    "max_pool",
    "add",
    "mul",
    "gate",
    "sigmoid",
    "concat",
    "slice_channels",
    "scale",
    "sum",
    "weighted_sum",
    "wbce",
];

/// Suites over composed network pieces.
pub const MODULES: [&str; 4] = ["residual_block", "attention_module", "supervision_head", "total_loss"];

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: &'static str,
    pub module: bool,
    pub tensors: usize,
    pub worst_rel_error: f64,
    /// Tensor with the largest error.
    pub worst_tensor: String,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.worst_rel_error < TOLERANCE
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub results: Vec<SuiteResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(SuiteResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &SuiteResult> {
        self.results.iter().filter(|r| !r.passed())
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<20} {:<7} {:>7} {:>12}  {}\n", "suite", "kind", "tensors", "rel_error", "status");
        for r in &self.results {
            s.push_str(&format!(
                "{:<20} {:<7} {:>7} {:>12.3e}  {}\n",
                r.name,
                if r.module { "module" } else { "op" },
                r.tensors,
                r.worst_rel_error,
                if r.passed() { "pass".to_string() } else { format!("FAIL ({})", r.worst_tensor) }
            ));
        }
        s
    }
}

type Loss = Box<dyn Fn(&mut Graph<f64>, &mut ParameterStore<f64>, &[Var]) -> cpseg_tensor::Result<Var>>;

struct Case {
    store: ParameterStore<f64>,
    inputs: Vec<Tensor<f64>>,
    loss: Loss,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Values with magnitude at least 0.05, so kinks sit far from the FD step.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Contracts `y` with a fixed random tensor so no gradient is trivially uniform.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> cpseg_tensor::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = uniform(&mut rng, g.shape(y), -1.0, 1.0);
    let r = g.constant(r);
    let m = g.mul(y, r)?;
    Ok(g.sum(m))
}

fn learnable(store: &mut ParameterStore<f64>, path: &str, value: Tensor<f64>) -> Result<cpseg_tensor::ParamId> {
    Ok(store.register(path, ParamKind::Learnable, value)?)
}

fn init<'a>(store: &'a mut ParameterStore<f64>, rng: &'a mut ChaCha8Rng) -> Init<'a, f64, ChaCha8Rng> {
    Init {
        store,
        rng,
        prelu_slope: 0.25,
        bn_eps: 1e-5,
        bn_momentum: 0.1,
    }
}

fn op_case(name: &str, rng: &mut ChaCha8Rng) -> Result<Case> {
    let mut store = ParameterStore::new();
    let seed = rng.random::<u64>();
    let case = match name {
        "conv3d" => {
            let w = learnable(&mut store, "w", uniform(rng, &[2, 3, 3, 3, 3], -1.0, 1.0))?;
            let b = learnable(&mut store, "b", uniform(rng, &[2], -1.0, 1.0))?;
            Case {
                inputs: vec![uniform(rng, &[2, 3, 3, 4, 3], -1.0, 1.0)],
                loss: Box::new(move |g, s, v| {
                    let (w, b) = (g.param(s, w), g.param(s, b));
                    let y = g.conv3d(v[0], w, Some(b))?;
                    project(g, y, seed)
                }),
                store,
            }
        }
        "batch_norm_train" | "batch_norm_eval" => {
            let gamma = learnable(&mut store, "gamma", uniform(rng, &[3], 0.5, 1.5))?;
            let beta = learnable(&mut store, "beta", uniform(rng, &[3], -0.5, 0.5))?;
            let mean: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
            let train = name == "batch_norm_train";
            Case {
                inputs: vec![uniform(rng, &[2, 3, 2, 3, 2], -1.0, 1.0)],
                loss: Box::new(move |g, s, v| {
                    let (ga, be) = (g.param(s, gamma), g.param(s, beta));
                    let mode = if train {
                        BnMode::Train {
                            running: None,
                            momentum: 0.1,
                        }
                    } else {
                        BnMode::Eval {
                            running_mean: &mean,
                            running_var: &var,
                        }
                    };
                    let y = g.batch_norm(v[0], ga, be, 1e-5, mode)?;
                    project(g, y, seed)
                }),
                store,
            }
        }
        "prelu" => {
            let a = learnable(&mut store, "slope", uniform(rng, &[3], 0.05, 0.5))?;
            Case {
                inputs: vec![away_from_zero(rng, &[2, 3, 2, 2, 2])],
                loss: Box::new(move |g, s, v| {
                    let a = g.param(s, a);
                    let y = g.prelu(v[0], a)?;
                    project(g, y, seed)
                }),
                store,
            }
        }
        "upsample" => Case {
            inputs: vec![uniform(rng, &[1, 2, 2, 3, 2], -1.0, 1.0)],
            loss: Box::new(move |g, _, v| {
                let y = g.upsample(v[0], [4, 5, 4])?;
                project(g, y, seed)
            }),
            store,
        },
        "max_pool" => {
            // distinct values spaced well beyond the step keep the argmax stable
            let n = 2 * 2 * 4 * 4 * 4;
            let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
            vals.shuffle(rng);
            Case {
                inputs: vec![Tensor::new(vec![2, 2, 4, 4, 4], vals)?],
                loss: Box::new(move |g, _, v| {
                    let y = g.max_pool2(v[0])?;
                    project(g, y, seed)
                }),
                store,
            }
        }
        "add" | "mul" => {
            let mul = name == "mul";
            Case {
                inputs: vec![uniform(rng, &[1, 2, 2, 2, 3], -1.0, 1.0), uniform(rng, &[1, 2, 2, 2, 3], -1.0, 1.0)],
                loss: Box::new(move |g, _, v| {
                    let y = if mul { g.mul(v[0], v[1])? } else { g.add(v[0], v[1])? };
                    project(g, y, seed)
                }),
                store,
            }
        }
        "gate" => Case {
            inputs: vec![uniform(rng, &[2, 3, 2, 2, 2], -1.0, 1.0), uniform(rng, &[2, 1, 2, 2, 2], 0.1, 0.9)],
            loss: Box::new(move |g, _, v| {
                let y = g.gate(v[0], v[1])?;
                project(g, y, seed)
            }),
            store,
        },
        "sigmoid" => Case {
            inputs: vec![uniform(rng, &[1, 2, 2, 2, 2], -3.0, 3.0)],
            loss: Box::new(move |g, _, v| {
                let y = g.sigmoid(v[0]);
                project(g, y, seed)
            }),
            store,
        },
        "concat" => Case {
            inputs: vec![uniform(rng, &[2, 1, 2, 2, 2], -1.0, 1.0), uniform(rng, &[2, 3, 2, 2, 2], -1.0, 1.0)],
            loss: Box::new(move |g, _, v| {
                let y = g.concat(&[v[0], v[1]])?;
                project(g, y, seed)
            }),
            store,
        },
        "slice_channels" => Case {
            inputs: vec![uniform(rng, &[2, 5, 2, 2, 2], -1.0, 1.0)],
            loss: Box::new(move |g, _, v| {
                let y = g.slice_channels(v[0], 1, 3)?;
                project(g, y, seed)
            }),
            store,
        },
        "scale" => Case {
            inputs: vec![uniform(rng, &[1, 2, 2, 2, 2], -1.0, 1.0)],
            loss: Box::new(move |g, _, v| {
                let y = g.scale(v[0], -1.7);
                project(g, y, seed)
            }),
            store,
        },
        "sum" => Case {
            inputs: vec![uniform(rng, &[1, 2, 2, 2, 2], -1.0, 1.0)],
            loss: Box::new(move |g, _, v| {
                let y = g.mul(v[0], v[0])?;
                Ok(g.sum(y))
            }),
            store,
        },
        "weighted_sum" => Case {
            inputs: (0..3).map(|_| uniform(rng, &[1], -1.0, 1.0)).collect(),
            loss: Box::new(move |g, _, v| {
                let sq: Vec<Var> = v.iter().map(|&x| g.mul(x, x)).collect::<cpseg_tensor::Result<_>>()?;
                g.weighted_sum(&sq, &[0.8, 0.7, 0.6])
            }),
            store,
        },
        "wbce" => {
            let target = Arc::new(Tensor::from_fn([2, 1, 2, 3, 2], |_| rng.random_bool(0.3) as u8 as f64));
            Case {
                inputs: vec![uniform(rng, &[2, 1, 2, 3, 2], 0.05, 0.95)],
                loss: Box::new(move |g, _, v| g.wbce(v[0], target.clone(), 2.5)),
                store,
            }
        }
        other => return Err(Error::config(format!("unknown gradcheck suite {other:?}"))),
    };
    Ok(case)
}

fn module_case(name: &str, rng: &mut ChaCha8Rng) -> Result<Case> {
    let mut store = ParameterStore::new();
    let seed = rng.random::<u64>();
    let mut init_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let case = match name {
        "residual_block" => {
            let block = ResidualBlock::new(&mut init(&mut store, &mut init_rng), "block", 2, 3)?;
            Case {
                inputs: vec![uniform(rng, &[2, 2, 3, 3, 3], -1.0, 1.0)],
                loss: Box::new(move |g, s, v| {
                    let y = block.forward(&mut Ctx::new(g, s, true), v[0]).map_err(into_tensor_error)?;
                    project(g, y, seed)
                }),
                store,
            }
        }
        "attention_module" => {
            let module = AttentionModule::new(&mut init(&mut store, &mut init_rng), "att", &[3, 5, 7, 9], 1, true)?;
            Case {
                inputs: vec![uniform(rng, &[2, 4, 3, 3, 3], -1.0, 1.0)],
                loss: Box::new(move |g, s, v| {
                    let (y, a) = module.forward(&mut Ctx::new(g, s, true), v[0]).map_err(into_tensor_error)?;
                    let py = project(g, y, seed)?;
                    let pa = project(g, a, seed ^ 1)?;
                    g.add(py, pa)
                }),
                store,
            }
        }
        "supervision_head" => {
            let head = SupervisionHead::new(&mut init(&mut store, &mut init_rng), "head", 4)?;
            Case {
                inputs: vec![uniform(rng, &[2, 4, 2, 3, 2], -1.0, 1.0)],
                loss: Box::new(move |g, s, v| {
                    let y = head.forward(&mut Ctx::new(g, s, true), v[0]).map_err(into_tensor_error)?;
                    project(g, y, seed)
                }),
                store,
            }
        }
        "total_loss" => {
            let shape = [2, 1, 2, 2, 3];
            let target = Arc::new(Tensor::from_fn(shape, |_| rng.random_bool(0.4) as u8 as f64));
            let cfg = TrainConfig::default();
            Case {
                inputs: (0..9).map(|_| uniform(rng, &shape, 0.05, 0.95)).collect(),
                loss: Box::new(move |g, _, v| {
                    let outputs = ForwardOutputs {
                        final_prob: v[8],
                        backbone_probs: v[..4].to_vec(),
                        refine_probs: v[4..8].to_vec(),
                        attention_maps: Vec::new(),
                        stage_features: Vec::new(),
                        refined_features: Vec::new(),
                    };
                    let terms = total_loss(g, &outputs, &target, 3.0, SupervisionStrategy::default(), &cfg)
                        .map_err(into_tensor_error)?;
                    Ok(terms.total)
                }),
                store,
            }
        }
        other => return Err(Error::config(format!("unknown gradcheck suite {other:?}"))),
    };
    Ok(case)
}

fn into_tensor_error(e: Error) -> cpseg_tensor::TensorError {
    match e {
        Error::Tensor(t) => t,
        other => cpseg_tensor::TensorError::InvalidArgument {
            op: "gradcheck",
            detail: other.to_string(),
        },
    }
}

fn summarize(name: &'static str, module: bool, checks: Vec<TensorCheck>) -> SuiteResult {
    let worst = checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error));
    SuiteResult {
        name,
        module,
        tensors: checks.len(),
        worst_rel_error: worst.map_or(0.0, |c| c.rel_error),
        worst_tensor: worst.map_or_else(String::new, |c| c.name.clone()),
    }
}

/// Runs every suite. `fault` names a suite whose analytic gradients are
/// deliberately scaled by 1.01 before comparison.
pub fn run_gradcheck(seed: u64, fault: Option<&str>) -> Result<GradcheckReport> {
    if let Some(f) = fault {
        if !OPS.contains(&f) && !MODULES.contains(&f) {
            return Err(Error::config(format!(
                "unknown suite {f:?} for fault injection; expected one of {}",
                OPS.iter().chain(&MODULES).copied().collect::<Vec<_>>().join(", ")
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::with_capacity(OPS.len() + MODULES.len());
    let suites = OPS.iter().map(|n| (*n, false)).chain(MODULES.iter().map(|n| (*n, true)));
    for (name, module) in suites {
        let case = if module { module_case(name, &mut rng)? } else { op_case(name, &mut rng)? };
        let opts = FdOptions {
            analytic_scale: if fault == Some(name) { 1.01 } else { 1.0 },
            ..FdOptions::default()
        };
        let checks = check_gradients(&case.store, &case.inputs, opts, &case.loss)?;
        results.push(summarize(name, module, checks));
    }
    Ok(GradcheckReport { results })
}
