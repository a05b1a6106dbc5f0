//! Trilinear upsampling (half-pixel centers, border clamped) and 2x max pooling.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
}

/// Source taps for resizing one axis from `n_in` to `n_out` samples.
fn taps<T: Scalar>(n_in: usize, n_out: usize) -> Vec<Tap<T>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap {
                lo,
                hi,
                frac: T::from_f64_lossy(frac),
            }
        })
        .collect()
}

/// Linear resize of `axis` (2, 3 or 4) of a 5-D buffer.
fn resize_axis<T: Scalar>(data: &[T], shape: [usize; 5], axis: usize, n_out: usize) -> (Vec<T>, [usize; 5]) {
    let n_in = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let tp = taps::<T>(n_in, n_out);
    let mut out = vec![T::zero(); outer * n_out * inner];
    for o in 0..outer {
        let src = &data[o * n_in * inner..(o + 1) * n_in * inner];
        let dst = &mut out[o * n_out * inner..(o + 1) * n_out * inner];
        for (i, t) in tp.iter().enumerate() {
            let a = &src[t.lo * inner..(t.lo + 1) * inner];
            let b = &src[t.hi * inner..(t.hi + 1) * inner];
            let w0 = T::one() - t.frac;
            for ((d, &va), &vb) in dst[i * inner..(i + 1) * inner].iter_mut().zip(a).zip(b) {
                *d = w0 * va + t.frac * vb;
            }
        }
    }
    let mut s = shape;
    s[axis] = n_out;
    (out, s)
}

/// Adjoint of [`resize_axis`]: maps a gradient of the resized buffer back.
fn resize_axis_adjoint<T: Scalar>(dy: &[T], in_shape: [usize; 5], axis: usize, n_out: usize) -> Vec<T> {
    let n_in = in_shape[axis];
    let outer: usize = in_shape[..axis].iter().product();
    let inner: usize = in_shape[axis + 1..].iter().product();
    let tp = taps::<T>(n_in, n_out);
    let mut dx = vec![T::zero(); outer * n_in * inner];
    for o in 0..outer {
        let g = &dy[o * n_out * inner..(o + 1) * n_out * inner];
        let dst = &mut dx[o * n_in * inner..(o + 1) * n_in * inner];
        for (i, t) in tp.iter().enumerate() {
            let w0 = T::one() - t.frac;
            let gi = &g[i * inner..(i + 1) * inner];
            for (j, &v) in gi.iter().enumerate() {
                dst[t.lo * inner + j] += w0 * v;
                dst[t.hi * inner + j] += t.frac * v;
            }
        }
    }
    dx
}

pub(crate) fn upsample_check<T: Scalar>(x: &Tensor<T>, target: [usize; 3]) -> Result<[usize; 5]> {
    let s = x.dims5("trilinear_upsample")?;
    for (axis, &t) in target.iter().enumerate() {
        if t < s[axis + 2] {
            return Err(TensorError::invalid(
                "trilinear_upsample",
                format!("target {target:?} is smaller than input spatial shape {:?}", &s[2..]),
            ));
        }
    }
    Ok(s)
}

pub(crate) fn upsample_forward<T: Scalar>(x: &Tensor<T>, target: [usize; 3]) -> Result<Tensor<T>> {
    let mut shape = upsample_check(x, target)?;
    let mut data = x.data().to_vec();
    for axis in (2..5).rev() {
        if shape[axis] != target[axis - 2] {
            let (d, s) = resize_axis(&data, shape, axis, target[axis - 2]);
            data = d;
            shape = s;
        }
    }
    Tensor::new(shape.to_vec(), data)
}

pub(crate) fn upsample_backward<T: Scalar>(in_shape: [usize; 5], target: [usize; 3], dy: &[T]) -> Vec<T> {
    // forward order was W, H, D; undo in reverse
    let mut shapes = Vec::with_capacity(3);
    let mut s = in_shape;
    for axis in (2..5).rev() {
        shapes.push((axis, s));
        s[axis] = target[axis - 2];
    }
    let mut g = dy.to_vec();
    for &(axis, shape_before) in shapes.iter().rev() {
        if shape_before[axis] != target[axis - 2] {
            g = resize_axis_adjoint(&g, shape_before, axis, target[axis - 2]);
        }
    }
    g
}

/// 2x2x2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat input index of the selected maximum (first in scan order).
pub(crate) fn maxpool2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, c, d, h, w] = x.dims5("max_pool2")?;
    if d % 2 != 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::invalid(
            "max_pool2",
            format!("spatial shape {:?} is not divisible by 2", [d, h, w]),
        ));
    }
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * od * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    let xd = x.data();
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = base + ((2 * z) * h + 2 * y) * w + 2 * xo;
                    for a in 0..2 {
                        for b in 0..2 {
                            for cc in 0..2 {
                                let i = base + ((2 * z + a) * h + 2 * y + b) * w + 2 * xo + cc;
                                if xd[i] > xd[best] {
                                    best = i;
                                }
                            }
                        }
                    }
                    out.push(xd[best]);
                    arg.push(best as u32);
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, c, od, oh, ow], out)?, arg))
}

pub(crate) fn maxpool2_backward<T: Scalar>(in_numel: usize, argmax: &[u32], dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); in_numel];
    for (&i, &g) in argmax.iter().zip(dy) {
        dx[i as usize] += g;
    }
    dx
}
