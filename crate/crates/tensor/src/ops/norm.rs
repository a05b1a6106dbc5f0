//! Per-channel batch normalization over (N, D, H, W).

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Statistics saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct BnSaved<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Batch statistics of a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<T>,
    /// Number of elements reduced per channel.
    pub count: usize,
}

fn layout<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [n, c, d, h, w] = x.dims5("batch_norm3d")?;
    for (p, name) in [(gamma, "gamma length"), (beta, "beta length")] {
        if p.numel() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm3d",
                dim: name,
                expected: c,
                got: p.numel(),
            });
        }
    }
    Ok((n, c, d * h * w))
}

fn channel_iter<T: Copy>(data: &[T], n: usize, c: usize, sp: usize, ch: usize) -> impl Iterator<Item = &[T]> {
    (0..n).map(move |ni| &data[(ni * c + ch) * sp..(ni * c + ch + 1) * sp])
}

pub(crate) fn forward_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, BnSaved<T>, BatchStats<T>)> {
    let (n, c, sp) = layout(x, gamma, beta)?;
    let count = n * sp;
    let mut mean = Vec::with_capacity(c);
    let mut var = Vec::with_capacity(c);
    for ch in 0..c {
        let mut s = 0.0f64;
        for run in channel_iter(x.data(), n, c, sp, ch) {
            s += run.iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let m = s / count as f64;
        let mut ss = 0.0f64;
        for run in channel_iter(x.data(), n, c, sp, ch) {
            ss += run.iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
        }
        mean.push(m);
        var.push(ss / count as f64);
    }
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::from_f64_lossy(1.0 / (v + eps.as_f64()).sqrt()))
        .collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64_lossy(m)).collect();
    let y = apply(x, gamma, beta, &mean_t, &inv_std, n, c, sp);
    let stats = BatchStats {
        mean: mean_t.clone(),
        var: var.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        count,
    };
    Ok((y, BnSaved { mean: mean_t, inv_std }, stats))
}

pub(crate) fn forward_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Result<(Tensor<T>, BnSaved<T>)> {
    let (n, c, sp) = layout(x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(TensorError::ShapeMismatch {
            op: "batch_norm3d",
            dim: "running statistics length",
            expected: c,
            got: running_mean.len().min(running_var.len()),
        });
    }
    let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let y = apply(x, gamma, beta, running_mean, &inv_std, n, c, sp);
    Ok((
        y,
        BnSaved {
            mean: running_mean.to_vec(),
            inv_std,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn apply<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    n: usize,
    c: usize,
    sp: usize,
) -> Tensor<T> {
    let mut out = vec![T::zero(); x.numel()];
    for ni in 0..n {
        for ch in 0..c {
            let s = (ni * c + ch) * sp;
            let scale = gamma.data()[ch] * inv_std[ch];
            let shift = beta.data()[ch] - mean[ch] * scale;
            for (o, &v) in out[s..s + sp].iter_mut().zip(&x.data()[s..s + sp]) {
                *o = v * scale + shift;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape as input")
}

/// Gradients `(dx, dgamma, dbeta)`.
pub(crate) fn backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    saved: &BnSaved<T>,
    dy: &[T],
    train: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let shape = x.shape();
    let (n, c) = (shape[0], shape[1]);
    let sp: usize = shape[2..].iter().product();
    let count = (n * sp) as f64;
    let mut dx = vec![T::zero(); x.numel()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let m = saved.mean[ch];
        let is = saved.inv_std[ch];
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for ni in 0..n {
            let s = (ni * c + ch) * sp;
            for (&xv, &g) in x.data()[s..s + sp].iter().zip(&dy[s..s + sp]) {
                let xhat = ((xv - m) * is).as_f64();
                sum_dy += g.as_f64();
                sum_dy_xhat += g.as_f64() * xhat;
            }
        }
        dgamma[ch] = T::from_f64_lossy(sum_dy_xhat);
        dbeta[ch] = T::from_f64_lossy(sum_dy);
        let gi = gamma[ch] * is;
        if train {
            let mean_dy = T::from_f64_lossy(sum_dy / count);
            let mean_dy_xhat = T::from_f64_lossy(sum_dy_xhat / count);
            for ni in 0..n {
                let s = (ni * c + ch) * sp;
                for i in s..s + sp {
                    let xhat = (x.data()[i] - m) * is;
                    dx[i] = gi * (dy[i] - mean_dy - xhat * mean_dy_xhat);
                }
            }
        } else {
            for ni in 0..n {
                let s = (ni * c + ch) * sp;
                for i in s..s + sp {
                    dx[i] = gi * dy[i];
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}
