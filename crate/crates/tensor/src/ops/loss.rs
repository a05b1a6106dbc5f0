use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logarithms.
pub const PROB_EPS: f64 = 1e-7;

fn bounds<T: Scalar>() -> (T, T) {
    (T::from_f64_lossy(PROB_EPS), T::from_f64_lossy(1.0 - PROB_EPS))
}

pub(crate) fn check<T: Scalar>(p: &Tensor<T>, target: &Tensor<T>, alpha: T) -> Result<()> {
    if p.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "wbce",
            dim: "element count",
            expected: p.numel(),
            got: target.numel(),
        });
    }
    if !(alpha > T::zero()) {
        return Err(TensorError::invalid("wbce", format!("alpha must be positive, got {alpha}")));
    }
    Ok(())
}

/// `-(1/N) * sum(alpha * g * ln p + (1 - g) * ln(1 - p))`.
pub(crate) fn wbce_forward<T: Scalar>(p: &[T], g: &[T], alpha: T) -> T {
    let (lo, hi) = bounds::<T>();
    let a = alpha.as_f64();
    let mut s = 0.0f64;
    for (&pv, &gv) in p.iter().zip(g) {
        let pc = pv.max(lo).min(hi).as_f64();
        let gv = gv.as_f64();
        s += a * gv * pc.ln() + (1.0 - gv) * (1.0 - pc).ln();
    }
    T::from_f64_lossy(-s / p.len() as f64)
}

pub(crate) fn wbce_backward<T: Scalar>(p: &[T], g: &[T], alpha: T, dl: T) -> Vec<T> {
    let (lo, hi) = bounds::<T>();
    let scale = dl / T::from_usize(p.len()).expect("length fits");
    p.iter()
        .zip(g)
        .map(|(&pv, &gv)| {
            if pv < lo || pv > hi {
                return T::zero();
            }
            -scale * (alpha * gv / pv - (T::one() - gv) / (T::one() - pv))
        })
        .collect()
}
