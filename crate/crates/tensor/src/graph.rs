//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value and whatever the
//! backward pass needs. Nodes are appended in execution order, so the tape is
//! topologically sorted by construction and backward is a single reverse sweep.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::ops::{activation, conv, loss, norm, resample};
use crate::params::{ParamId, ParamKind, ParameterStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Normalization statistics source for [`Graph::batch_norm`].
pub enum BnMode<'a, T> {
    /// Normalize with batch statistics; optionally fold them into running
    /// statistics by exponential moving average.
    Train {
        running: Option<(&'a mut [T], &'a mut [T])>,
        momentum: T,
    },
    /// Normalize with stored running statistics.
    Eval { running_mean: &'a [T], running_var: &'a [T] },
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: norm::BnSaved<T>,
        train: bool,
    },
    Prelu {
        x: Var,
        slope: Var,
    },
    Upsample {
        x: Var,
        target: [usize; 3],
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Gate {
        features: Var,
        gate: Var,
    },
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
        len: usize,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Sum(Var),
    WeightedSum {
        terms: Vec<Var>,
        weights: Vec<T>,
    },
    Wbce {
        p: Var,
        target: Arc<Tensor<T>>,
        alpha: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of leaf inputs and parameters produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }
}

/// A computation graph. Not shareable across threads while recording;
/// distinct graphs are independent.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A graph that records no backward information (inference).
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Takes the value out of the graph, leaving it consumed.
    pub fn into_value(mut self, v: Var) -> Tensor<T> {
        self.nodes.swap_remove(v.0).value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf tensor. Gradients are reported for it when `requires_grad`.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    /// Leaf holding the current value of a stored parameter. Learnable
    /// parameters route their gradients back into the store on backward.
    pub fn param(&mut self, store: &ParameterStore<T>, id: ParamId) -> Var {
        let requires_grad = self.grad_enabled && store.kind(id) == ParamKind::Learnable;
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: if requires_grad { Op::Param(id) } else { Op::Leaf },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = conv::forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, Op::Conv3d { x, w, b }, &inputs))
    }

    /// Batch normalization; returns the output and, in train mode, the batch
    /// statistics used.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T, mode: BnMode<'_, T>) -> Result<Var> {
        if !(eps >= T::zero()) {
            return Err(TensorError::invalid("batch_norm3d", "epsilon must be non-negative"));
        }
        let (y, saved, train) = match mode {
            BnMode::Train { running, momentum } => {
                let (y, saved, stats) = norm::forward_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
                if let Some((rm, rv)) = running {
                    let unbias = if stats.count > 1 {
                        T::from_f64_lossy(stats.count as f64 / (stats.count - 1) as f64)
                    } else {
                        T::one()
                    };
                    let keep = T::one() - momentum;
                    for c in 0..rm.len().min(stats.mean.len()) {
                        rm[c] = keep * rm[c] + momentum * stats.mean[c];
                        rv[c] = keep * rv[c] + momentum * stats.var[c] * unbias;
                    }
                }
                (y, saved, true)
            }
            BnMode::Eval {
                running_mean,
                running_var,
            } => {
                let (y, saved) = norm::forward_eval(
                    self.value(x),
                    self.value(gamma),
                    self.value(beta),
                    running_mean,
                    running_var,
                    eps,
                )?;
                (y, saved, false)
            }
        };
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
                train,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let y = activation::prelu_forward(self.value(x), self.value(slope))?;
        Ok(self.push(y, Op::Prelu { x, slope }, &[x, slope]))
    }

    pub fn upsample(&mut self, x: Var, target: [usize; 3]) -> Result<Var> {
        let y = resample::upsample_forward(self.value(x), target)?;
        Ok(self.push(y, Op::Upsample { x, target }, &[x]))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = resample::maxpool2_forward(self.value(x))?;
        Ok(self.push(y, Op::MaxPool { x, argmax }, &[x]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return Err(TensorError::Rank {
                op,
                expected: sa.len(),
                shape: sb.to_vec(),
            });
        }
        const NAMES: [&str; 5] = ["batch", "channels", "depth", "height", "width"];
        for (i, (&x, &y)) in sa.iter().zip(sb).enumerate() {
            if x != y {
                return Err(TensorError::ShapeMismatch {
                    op,
                    dim: NAMES.get(i).copied().unwrap_or("trailing dimension"),
                    expected: x,
                    got: y,
                });
            }
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let y = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let y = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(y, Op::Mul(a, b), &[a, b]))
    }

    /// Multiplies every channel of `features` (N,C,D,H,W) by the single-channel
    /// map `gate` (N,1,D,H,W).
    pub fn gate(&mut self, features: Var, gate: Var) -> Result<Var> {
        let [n, c, d, h, w] = self.value(features).dims5("gate")?;
        let gs = self.value(gate).dims5("gate")?;
        if gs[1] != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "gate",
                dim: "gate channels",
                expected: 1,
                got: gs[1],
            });
        }
        if gs != [n, 1, d, h, w] {
            return Err(TensorError::invalid(
                "gate",
                format!("gate shape {gs:?} incompatible with features {:?}", [n, c, d, h, w]),
            ));
        }
        let sp = d * h * w;
        let f = self.value(features).data();
        let gv = self.value(gate).data();
        let mut out = vec![T::zero(); f.len()];
        for ni in 0..n {
            let gslice = &gv[ni * sp..(ni + 1) * sp];
            for ch in 0..c {
                let s = (ni * c + ch) * sp;
                for ((o, &fv), &a) in out[s..s + sp].iter_mut().zip(&f[s..s + sp]).zip(gslice) {
                    *o = fv * a;
                }
            }
        }
        let y = Tensor::new(vec![n, c, d, h, w], out)?;
        Ok(self.push(y, Op::Gate { features, gate }, &[features, gate]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(activation::sigmoid);
        self.push(y, Op::Sigmoid(x), &[x])
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let [n, _, d, h, w] = self.value(first).dims5("concat")?;
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let [pn, pc, pd, ph, pw] = self.value(p).dims5("concat")?;
            for (dim, e, g) in [("batch", n, pn), ("depth", d, pd), ("height", h, ph), ("width", w, pw)] {
                if e != g {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        dim,
                        expected: e,
                        got: g,
                    });
                }
            }
            channels.push(pc);
        }
        let total: usize = channels.iter().sum();
        let sp = d * h * w;
        let mut out = Vec::with_capacity(n * total * sp);
        for ni in 0..n {
            for (&p, &pc) in parts.iter().zip(&channels) {
                out.extend_from_slice(&self.value(p).data()[ni * pc * sp..(ni + 1) * pc * sp]);
            }
        }
        let y = Tensor::new(vec![n, total, d, h, w], out)?;
        Ok(self.push(y, Op::Concat(parts.to_vec()), parts))
    }

    /// Channels `start..start+len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, d, h, w] = self.value(x).dims5("slice_channels")?;
        if len == 0 || start + len > c {
            return Err(TensorError::invalid(
                "slice_channels",
                format!("range {start}..{} out of {c} channels", start + len),
            ));
        }
        let sp = d * h * w;
        let mut out = Vec::with_capacity(n * len * sp);
        for ni in 0..n {
            let s = (ni * c + start) * sp;
            out.extend_from_slice(&self.value(x).data()[s..s + len * sp]);
        }
        let y = Tensor::new(vec![n, len, d, h, w], out)?;
        Ok(self.push(y, Op::Slice { x, start, len }, &[x]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let y = self.value(x).map(|v| v * factor);
        self.push(y, Op::Scale { x, factor }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        self.push(Tensor::scalar(T::from_f64_lossy(s)), Op::Sum(x), &[x])
    }

    /// `sum_i weights[i] * terms[i]` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[Var], weights: &[T]) -> Result<Var> {
        if terms.len() != weights.len() {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_sum",
                dim: "weight count",
                expected: terms.len(),
                got: weights.len(),
            });
        }
        let mut acc = T::zero();
        for (&t, &w) in terms.iter().zip(weights) {
            if !self.value(t).is_scalar() {
                return Err(TensorError::invalid("weighted_sum", "terms must be scalars"));
            }
            acc += w * self.value(t).item();
        }
        Ok(self.push(
            Tensor::scalar(acc),
            Op::WeightedSum {
                terms: terms.to_vec(),
                weights: weights.to_vec(),
            },
            terms,
        ))
    }

    /// Class-weighted binary cross-entropy of probabilities `p` against a
    /// binary target, averaged over all elements.
    pub fn wbce(&mut self, p: Var, target: Arc<Tensor<T>>, alpha: T) -> Result<Var> {
        loss::check(self.value(p), &target, alpha)?;
        let l = loss::wbce_forward(self.value(p).data(), target.data(), alpha);
        Ok(self.push(Tensor::scalar(l), Op::Wbce { p, target, alpha }, &[p]))
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are added into
    /// `store` (accumulating across calls until zeroed); gradients of
    /// differentiable leaves are returned.
    pub fn backward(&self, loss: Var, mut store: Option<&mut ParameterStore<T>>) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        let mut out = HashMap::new();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads: out });
        }
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if node.requires_grad {
                        out.insert(Var(i), Tensor::new(node.value.shape().to_vec(), dy)?);
                    }
                }
                Op::Param(id) => {
                    if let Some(s) = store.as_deref_mut() {
                        s.accumulate_grad(*id, &dy);
                    }
                    out.insert(Var(i), Tensor::new(node.value.shape().to_vec(), dy)?);
                }
                Op::Conv3d { x, w, b } => {
                    let g = conv::geometry(self.value(*x), self.value(*w), b.map(|b| self.value(b)))?;
                    if self.requires_grad(*x) {
                        let dx = conv::backward_input(&dy, self.value(*w).data(), &g);
                        self.acc(&mut grads, *x, dx);
                    }
                    if self.requires_grad(*w) {
                        let dw = conv::backward_weight(self.value(*x).data(), &dy, &g);
                        self.acc(&mut grads, *w, dw);
                    }
                    if let Some(b) = b {
                        if self.requires_grad(*b) {
                            self.acc(&mut grads, *b, conv::backward_bias(&dy, &g));
                        }
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    saved,
                    train,
                } => {
                    let (dx, dg, db) = norm::backward(self.value(*x), self.value(*gamma).data(), saved, &dy, *train);
                    self.acc(&mut grads, *x, dx);
                    self.acc(&mut grads, *gamma, dg);
                    self.acc(&mut grads, *beta, db);
                }
                Op::Prelu { x, slope } => {
                    let (dx, da) = activation::prelu_backward(self.value(*x), self.value(*slope).data(), &dy);
                    self.acc(&mut grads, *x, dx);
                    self.acc(&mut grads, *slope, da);
                }
                Op::Upsample { x, target } => {
                    let s = self.value(*x).dims5("trilinear_upsample")?;
                    self.acc(&mut grads, *x, resample::upsample_backward(s, *target, &dy));
                }
                Op::MaxPool { x, argmax } => {
                    let dx = resample::maxpool2_backward(self.value(*x).numel(), argmax, &dy);
                    self.acc(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    if self.requires_grad(*a) {
                        self.acc(&mut grads, *a, dy.clone());
                    }
                    self.acc(&mut grads, *b, dy);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    if self.requires_grad(*a) {
                        self.acc(&mut grads, *a, dy.iter().zip(vb).map(|(&g, &v)| g * v).collect());
                    }
                    if self.requires_grad(*b) {
                        self.acc(&mut grads, *b, dy.iter().zip(va).map(|(&g, &v)| g * v).collect());
                    }
                }
                Op::Gate { features, gate } => {
                    let [n, c, d, h, w] = self.value(*features).dims5("gate")?;
                    let sp = d * h * w;
                    let f = self.value(*features).data();
                    let a = self.value(*gate).data();
                    if self.requires_grad(*features) {
                        let mut df = vec![T::zero(); f.len()];
                        for ni in 0..n {
                            for ch in 0..c {
                                let s = (ni * c + ch) * sp;
                                for j in 0..sp {
                                    df[s + j] = dy[s + j] * a[ni * sp + j];
                                }
                            }
                        }
                        self.acc(&mut grads, *features, df);
                    }
                    if self.requires_grad(*gate) {
                        let mut da = vec![T::zero(); a.len()];
                        for ni in 0..n {
                            for ch in 0..c {
                                let s = (ni * c + ch) * sp;
                                for j in 0..sp {
                                    da[ni * sp + j] += dy[s + j] * f[s + j];
                                }
                            }
                        }
                        self.acc(&mut grads, *gate, da);
                    }
                }
                Op::Sigmoid(x) => {
                    let dx = activation::sigmoid_backward(node.value.data(), &dy);
                    self.acc(&mut grads, *x, dx);
                }
                Op::Concat(parts) => {
                    let [n, _, d, h, w] = node.value.dims5("concat")?;
                    let total = node.value.shape()[1];
                    let sp = d * h * w;
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.shape(p)[1];
                        if self.requires_grad(p) {
                            let mut dp = Vec::with_capacity(n * pc * sp);
                            for ni in 0..n {
                                let s = (ni * total + offset) * sp;
                                dp.extend_from_slice(&dy[s..s + pc * sp]);
                            }
                            self.acc(&mut grads, p, dp);
                        }
                        offset += pc;
                    }
                }
                Op::Slice { x, start, len } => {
                    let [n, c, d, h, w] = self.value(*x).dims5("slice_channels")?;
                    let sp = d * h * w;
                    let mut dx = vec![T::zero(); n * c * sp];
                    for ni in 0..n {
                        let s = (ni * c + start) * sp;
                        dx[s..s + len * sp].copy_from_slice(&dy[ni * len * sp..(ni + 1) * len * sp]);
                    }
                    self.acc(&mut grads, *x, dx);
                }
                Op::Scale { x, factor } => {
                    self.acc(&mut grads, *x, dy.iter().map(|&g| g * *factor).collect());
                }
                Op::Sum(x) => {
                    self.acc(&mut grads, *x, vec![dy[0]; self.value(*x).numel()]);
                }
                Op::WeightedSum { terms, weights } => {
                    for (&t, &w) in terms.iter().zip(weights) {
                        self.acc(&mut grads, t, vec![dy[0] * w]);
                    }
                }
                Op::Wbce { p, target, alpha } => {
                    let dp = loss::wbce_backward(self.value(*p).data(), target.data(), *alpha, dy[0]);
                    self.acc(&mut grads, *p, dp);
                }
            }
        }
        Ok(Gradients { grads: out })
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }
}
