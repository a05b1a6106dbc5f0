//! Parameterized building blocks. Layers hold only parameter handles; values
//! live in a [`ParameterStore`] so one layout serves both precisions.

use cpseg_tensor::{BnMode, Graph, ParamId, ParamKind, ParameterStore, Scalar, Tensor, TensorError, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

/// Everything a layer needs to record its forward pass.
pub struct Ctx<'a, T: Scalar> {
    pub graph: &'a mut Graph<T>,
    pub store: &'a mut ParameterStore<T>,
    /// Batch statistics (and running-stat updates) instead of running stats.
    pub train: bool,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(graph: &'a mut Graph<T>, store: &'a mut ParameterStore<T>, train: bool) -> Self {
        Ctx { graph, store, train }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.graph.param(self.store, id)
    }
}

/// Initialization state threaded through model construction.
pub struct Init<'a, T: Scalar, R: Rng> {
    pub store: &'a mut ParameterStore<T>,
    pub rng: &'a mut R,
    /// Negative slope assumed by the fan-in scaled initialization.
    pub prelu_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl<T: Scalar, R: Rng> Init<'_, T, R> {
    fn register(&mut self, path: String, kind: ParamKind, value: Tensor<T>) -> Result<ParamId> {
        Ok(self.store.register(path, kind, value)?)
    }

    fn gaussian(&mut self, shape: Vec<usize>, std: f64) -> Tensor<T> {
        let rng = &mut *self.rng;
        Tensor::from_fn(shape, |_| T::from_f64_lossy(std * rng.sample::<f64, _>(StandardNormal)))
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl Conv {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, path: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        let fan_in = (cin * k * k * k) as f64;
        let a = init.prelu_slope;
        let std = (2.0 / ((1.0 + a * a) * fan_in)).sqrt();
        let w = init.gaussian(vec![cout, cin, k, k, k], std);
        let weight = init.register(format!("{path}.weight"), ParamKind::Learnable, w)?;
        let bias = init.register(format!("{path}.bias"), ParamKind::Learnable, Tensor::zeros([cout]))?;
        Ok(Conv {
            weight,
            bias,
            cin,
            cout,
            k,
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.param(self.weight);
        let b = cx.param(self.bias);
        Ok(cx.graph.conv3d(x, w, Some(b))?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, path: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: init.register(format!("{path}.gamma"), ParamKind::Learnable, Tensor::full([channels], T::one()))?,
            beta: init.register(format!("{path}.beta"), ParamKind::Learnable, Tensor::zeros([channels]))?,
            running_mean: init.register(format!("{path}.running_mean"), ParamKind::Buffer, Tensor::zeros([channels]))?,
            running_var: init.register(
                format!("{path}.running_var"),
                ParamKind::Buffer,
                Tensor::full([channels], T::one()),
            )?,
            eps: init.bn_eps,
            momentum: init.bn_momentum,
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let gamma = cx.param(self.gamma);
        let beta = cx.param(self.beta);
        let eps = T::from_f64_lossy(self.eps);
        if cx.train {
            let (rm, rv) = cx.store.pair_mut(self.running_mean, self.running_var);
            let mode = BnMode::Train {
                running: Some((rm.data_mut(), rv.data_mut())),
                momentum: T::from_f64_lossy(self.momentum),
            };
            Ok(cx.graph.batch_norm(x, gamma, beta, eps, mode)?)
        } else {
            let rm = cx.store.value(self.running_mean);
            let rv = cx.store.value(self.running_var);
            if !rm.all_finite() || rv.data().iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
                return Err(TensorError::UninitializedRunningStats(cx.store.path(self.running_var).to_string()).into());
            }
            let mode = BnMode::Eval {
                running_mean: rm.data(),
                running_var: rv.data(),
            };
            Ok(cx.graph.batch_norm(x, gamma, beta, eps, mode)?)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Prelu {
    pub slope: ParamId,
}

impl Prelu {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, path: &str, channels: usize) -> Result<Self> {
        let a = T::from_f64_lossy(init.prelu_slope);
        Ok(Prelu {
            slope: init.register(format!("{path}.slope"), ParamKind::Learnable, Tensor::full([channels], a))?,
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let a = cx.param(self.slope);
        Ok(cx.graph.prelu(x, a)?)
    }
}

/// Conv, batch norm, PReLU.
#[derive(Clone, Debug)]
pub struct ConvBnPrelu {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub act: Prelu,
}

impl ConvBnPrelu {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, path: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        Ok(ConvBnPrelu {
            conv: Conv::new(init, &format!("{path}.conv"), cin, cout, k)?,
            bn: BatchNorm::new(init, &format!("{path}.bn"), cout)?,
            act: Prelu::new(init, &format!("{path}.act"), cout)?,
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(cx, x)?;
        let y = self.bn.forward(cx, y)?;
        self.act.forward(cx, y)
    }
}

/// `shortcut(x) + branch(x)` with a two-layer 3x3x3 branch. The shortcut is
/// the identity unless the channel count changes, in which case it is a
/// 1x1x1 conv followed by batch norm.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub first: ConvBnPrelu,
    pub second: ConvBnPrelu,
    pub projection: Option<(Conv, BatchNorm)>,
}

impl ResidualBlock {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, path: &str, cin: usize, cout: usize) -> Result<Self> {
        let projection = if cin != cout {
            Some((
                Conv::new(init, &format!("{path}.shortcut.conv"), cin, cout, 1)?,
                BatchNorm::new(init, &format!("{path}.shortcut.bn"), cout)?,
            ))
        } else {
            None
        };
        Ok(ResidualBlock {
            first: ConvBnPrelu::new(init, &format!("{path}.branch.0"), cin, cout, 3)?,
            second: ConvBnPrelu::new(init, &format!("{path}.branch.1"), cout, cout, 3)?,
            projection,
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.first.forward(cx, x)?;
        let h = self.second.forward(cx, h)?;
        let s = match &self.projection {
            Some((conv, bn)) => {
                let s = conv.forward(cx, x)?;
                bn.forward(cx, s)?
            }
            None => x,
        };
        Ok(cx.graph.add(s, h)?)
    }
}

/// 1x1x1 conv to a single channel followed by a sigmoid.
#[derive(Clone, Debug)]
pub struct SupervisionHead {
    pub conv: Conv,
}

impl SupervisionHead {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, path: &str, cin: usize) -> Result<Self> {
        Ok(SupervisionHead {
            conv: Conv::new(init, path, cin, 1, 1)?,
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let logits = self.conv.forward(cx, x)?;
        Ok(cx.graph.sigmoid(logits))
    }
}
