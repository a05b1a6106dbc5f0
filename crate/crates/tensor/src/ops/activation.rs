use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn channels_and_spatial<T: Scalar>(x: &Tensor<T>, slope: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(TensorError::Rank {
            op: "prelu",
            expected: 5,
            shape: shape.to_vec(),
        });
    }
    let c = shape[1];
    if slope.numel() != c {
        return Err(TensorError::ShapeMismatch {
            op: "prelu",
            dim: "slope length",
            expected: c,
            got: slope.numel(),
        });
    }
    Ok((shape[0], c, shape[2..].iter().product()))
}

pub(crate) fn prelu_forward<T: Scalar>(x: &Tensor<T>, slope: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, sp) = channels_and_spatial(x, slope)?;
    let mut out = x.data().to_vec();
    for ni in 0..n {
        for ch in 0..c {
            let a = slope.data()[ch];
            for v in &mut out[(ni * c + ch) * sp..(ni * c + ch + 1) * sp] {
                if *v <= T::zero() {
                    *v = *v * a;
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Gradients `(dx, dslope)`.
pub(crate) fn prelu_backward<T: Scalar>(x: &Tensor<T>, slope: &[T], dy: &[T]) -> (Vec<T>, Vec<T>) {
    let shape = x.shape();
    let (n, c) = (shape[0], shape[1]);
    let sp: usize = shape[2..].iter().product();
    let mut dx = vec![T::zero(); x.numel()];
    let mut da = vec![T::zero(); c];
    for ni in 0..n {
        for ch in 0..c {
            let a = slope[ch];
            let s = (ni * c + ch) * sp;
            let mut acc = T::zero();
            for i in s..s + sp {
                let xv = x.data()[i];
                if xv > T::zero() {
                    dx[i] = dy[i];
                } else {
                    dx[i] = a * dy[i];
                    acc += xv * dy[i];
                }
            }
            da[ch] += acc;
        }
    }
    (dx, da)
}

/// Logistic function, kept strictly inside (0, 1): saturated values are
/// pinned to the smallest positive normal and to the largest float below one.
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    let s = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    let top = T::one() - T::epsilon() / (T::one() + T::one());
    s.max(T::min_positive_value()).min(top)
}

pub(crate) fn sigmoid_backward<T: Scalar>(y: &[T], dy: &[T]) -> Vec<T> {
    y.iter().zip(dy).map(|(&s, &g)| g * s * (T::one() - s)).collect()
}
