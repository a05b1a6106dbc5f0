//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamKind, ParameterStore};
use crate::tensor::Tensor;

/// Comparison of one tensor's analytic gradient with its numeric estimate.
#[derive(Clone, Debug)]
pub struct TensorCheck {
    /// `input[i]` for leaf inputs, the store path for parameters.
    pub name: String,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-4)`.
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

const ABS_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
pub struct FdOptions {
    pub step: f64,
    /// Multiplies the analytic gradient before comparison. Anything other
    /// than 1.0 simulates a faulty backward pass.
    pub analytic_scale: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-4,
            analytic_scale: 1.0,
        }
    }
}

fn rel_error(a: &[f64], n: &[f64]) -> (f64, f64, f64) {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    // Near-zero gradients (a bias feeding batch norm, a scale undone by a
    // later normalization) are dominated by the roundoff of the numeric
    // estimate, so below this norm the error is measured in absolute terms.
    let denom = na.max(nn).max(ABS_FLOOR);
    let rel = diff / denom;
    (rel, na, nn)
}

/// Fourth-order central difference of `f` at 0 with step `h`.
fn central_difference(h: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let (p1, m1) = (f(h)?, f(-h)?);
    let (p2, m2) = (f(2.0 * h)?, f(-2.0 * h)?);
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

/// Checks the gradient of the scalar produced by `f` with respect to every
/// leaf input and every learnable entry of `store`.
///
/// `f` receives a fresh graph, a scratch copy of the store and the input
/// variables, and returns the loss variable.
pub fn check_gradients<F>(
    store: &ParameterStore<f64>,
    inputs: &[Tensor<f64>],
    opts: FdOptions,
    f: F,
) -> Result<Vec<TensorCheck>>
where
    F: Fn(&mut Graph<f64>, &mut ParameterStore<f64>, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParameterStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let mut s = store.clone();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), false)).collect();
        let l = f(&mut g, &mut s, &vars)?;
        Ok(g.value(l).item())
    };

    let mut g = Graph::new();
    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let loss = f(&mut g, &mut analytic_store, &vars)?;
    let grads = g.backward(loss, Some(&mut analytic_store))?;

    let mut report = Vec::new();
    let h = opts.step;

    for (i, (t, v)) in inputs.iter().zip(&vars).enumerate() {
        let analytic: Vec<f64> = match grads.get(*v) {
            Some(gr) => gr.data().iter().map(|x| x * opts.analytic_scale).collect(),
            None => vec![0.0; t.numel()],
        };
        let mut numeric = Vec::with_capacity(t.numel());
        let mut perturbed = inputs.to_vec();
        for j in 0..t.numel() {
            let orig = t.data()[j];
            numeric.push(central_difference(h, |d| {
                perturbed[i].data_mut()[j] = orig + d;
                let l = eval(store, &perturbed);
                perturbed[i].data_mut()[j] = orig;
                l
            })?);
        }
        let (rel, na, nn) = rel_error(&analytic, &numeric);
        report.push(TensorCheck {
            name: format!("input[{i}]"),
            rel_error: rel,
            analytic_norm: na,
            numeric_norm: nn,
        });
    }

    let learnable: Vec<_> = store.ids().filter(|&id| store.kind(id) == ParamKind::Learnable).collect();
    for id in learnable {
        let numel = store.value(id).numel();
        let analytic: Vec<f64> = match analytic_store.grad(id) {
            Some(gr) => gr.data().iter().map(|x| x * opts.analytic_scale).collect(),
            None => vec![0.0; numel],
        };
        let mut numeric = Vec::with_capacity(numel);
        let mut s = store.clone();
        for j in 0..numel {
            let orig = store.value(id).data()[j];
            numeric.push(central_difference(h, |d| {
                s.value_mut(id).data_mut()[j] = orig + d;
                let l = eval(&s, inputs);
                s.value_mut(id).data_mut()[j] = orig;
                l
            })?);
        }
        let (rel, na, nn) = rel_error(&analytic, &numeric);
        report.push(TensorCheck {
            name: store.path(id).to_string(),
            rel_error: rel,
            analytic_norm: na,
            numeric_norm: nn,
        });
    }
    Ok(report)
}
