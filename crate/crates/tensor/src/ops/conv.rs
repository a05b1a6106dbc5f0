//! Stride-1, size-preserving 3-D convolution (cross-correlation) lowered to
//! GEMM through depth-chunked im2col.

use rayon::prelude::*;

use super::conv_direct;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Upper bound on im2col scratch elements per batch item.
const COL_BUDGET: usize = 1 << 22;

/// Widest output layer routed to the direct kernels.
const DIRECT_MAX_COUT: usize = 8;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvGeom {
    fn hw(&self) -> usize {
        self.h * self.w
    }
    fn dhw(&self) -> usize {
        self.d * self.h * self.w
    }
    fn patch(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }
}

pub(crate) fn geometry<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<ConvGeom> {
    let [n, cin, d, h, w] = x.dims5("conv3d")?;
    let (cout, wcin, k) = match weight.shape()[..] {
        [co, ci, k0, k1, k2] if k0 == k1 && k1 == k2 => (co, ci, k0),
        _ => {
            return Err(TensorError::invalid(
                "conv3d",
                format!("weight must be (out, in, k, k, k), got {:?}", weight.shape()),
            ))
        }
    };
    if k % 2 == 0 {
        return Err(TensorError::invalid("conv3d", format!("kernel size must be odd, got {k}")));
    }
    if wcin != cin {
        return Err(TensorError::ShapeMismatch {
            op: "conv3d",
            dim: "input channels",
            expected: wcin,
            got: cin,
        });
    }
    if let Some(b) = bias {
        if b.numel() != cout {
            return Err(TensorError::ShapeMismatch {
                op: "conv3d",
                dim: "bias length",
                expected: cout,
                got: b.numel(),
            });
        }
    }
    Ok(ConvGeom { n, cin, cout, d, h, w, k })
}

fn depth_chunk(g: &ConvGeom) -> usize {
    let per_slice = g.patch() * g.hw();
    (COL_BUDGET / per_slice.max(1)).clamp(1, g.d)
}

/// Fills `col` (rows = cin*k^3, row length = zc*hw) for output depths `z0..z0+zc`.
fn im2col<T: Scalar>(x_n: &[T], g: &ConvGeom, z0: usize, zc: usize, col: &mut [T]) {
    let (k, h, w) = (g.k, g.h, g.w);
    let p = (k / 2) as isize;
    let hw = g.hw();
    let row_len = zc * hw;
    let mut r = 0;
    for ci in 0..g.cin {
        let x_c = &x_n[ci * g.dhw()..(ci + 1) * g.dhw()];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let dst_row = &mut col[r * row_len..(r + 1) * row_len];
                    r += 1;
                    let sx = kw as isize - p;
                    let lo = (-sx).max(0) as usize;
                    let hi = ((w as isize - sx).min(w as isize)).max(0) as usize;
                    for zz in 0..zc {
                        let zi = (z0 + zz) as isize + kd as isize - p;
                        let dst = &mut dst_row[zz * hw..(zz + 1) * hw];
                        if zi < 0 || zi >= g.d as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let x_z = &x_c[zi as usize * hw..(zi as usize + 1) * hw];
                        for y in 0..h {
                            let yi = y as isize + kh as isize - p;
                            let dst_line = &mut dst[y * w..(y + 1) * w];
                            if yi < 0 || yi >= h as isize || lo >= hi {
                                dst_line.fill(T::zero());
                                continue;
                            }
                            let src_line = &x_z[yi as usize * w..(yi as usize + 1) * w];
                            dst_line[..lo].fill(T::zero());
                            let s0 = (lo as isize + sx) as usize;
                            dst_line[lo..hi].copy_from_slice(&src_line[s0..s0 + (hi - lo)]);
                            dst_line[hi..].fill(T::zero());
                        }
                    }
                }
            }
        }
    }
}

/// Narrow layers go through the direct kernels; everything else through GEMM.
fn use_direct(g: &ConvGeom) -> bool {
    conv_direct::supports(g.k) && g.cout <= DIRECT_MAX_COUT
}

fn forward_raw<T: Scalar>(x: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    if use_direct(g) {
        return conv_direct::forward(x, weight, bias, g);
    }
    let dhw = g.dhw();
    let in_stride = g.cin * dhw;
    let out_stride = g.cout * dhw;
    let mut out = vec![T::zero(); g.n * out_stride];
    let patch = g.patch();
    out.par_chunks_mut(out_stride).enumerate().for_each(|(ni, out_n)| {
        let x_n = &x[ni * in_stride..(ni + 1) * in_stride];
        if g.k == 1 {
            T::gemm(g.cout, g.cin, dhw, T::one(), weight, (g.cin, 1), x_n, (dhw, 1), T::zero(), out_n, (dhw, 1));
        } else {
            let zc_max = depth_chunk(g);
            let mut col = vec![T::zero(); patch * zc_max * g.hw()];
            let mut z0 = 0;
            while z0 < g.d {
                let zc = zc_max.min(g.d - z0);
                let len = zc * g.hw();
                let col = &mut col[..patch * len];
                im2col(x_n, g, z0, zc, col);
                T::gemm(
                    g.cout,
                    patch,
                    len,
                    T::one(),
                    weight,
                    (patch, 1),
                    col,
                    (len, 1),
                    T::zero(),
                    &mut out_n[z0 * g.hw()..],
                    (dhw, 1),
                );
                z0 += zc;
            }
        }
        if let Some(b) = bias {
            for (co, chunk) in out_n.chunks_mut(dhw).enumerate() {
                let bv = b[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    out
}

pub(crate) fn forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let g = geometry(x, weight, bias)?;
    let out = forward_raw(x.data(), weight.data(), bias.map(|b| b.data()), &g);
    Tensor::new(vec![g.n, g.cout, g.d, g.h, g.w], out)
}

/// Gradient w.r.t. the input: correlation of `dy` with the spatially flipped,
/// channel-transposed kernel.
pub(crate) fn backward_input<T: Scalar>(dy: &[T], weight: &[T], g: &ConvGeom) -> Vec<T> {
    let k3 = g.k * g.k * g.k;
    let mut flipped = vec![T::zero(); weight.len()];
    for co in 0..g.cout {
        for ci in 0..g.cin {
            let src = &weight[(co * g.cin + ci) * k3..(co * g.cin + ci + 1) * k3];
            let dst = &mut flipped[(ci * g.cout + co) * k3..(ci * g.cout + co + 1) * k3];
            for (i, v) in src.iter().enumerate() {
                dst[k3 - 1 - i] = *v;
            }
        }
    }
    let gt = ConvGeom {
        cin: g.cout,
        cout: g.cin,
        ..*g
    };
    forward_raw(dy, &flipped, None, &gt)
}

pub(crate) fn backward_weight<T: Scalar>(x: &[T], dy: &[T], g: &ConvGeom) -> Vec<T> {
    if use_direct(g) {
        return conv_direct::weight_grad(x, dy, g);
    }
    let dhw = g.dhw();
    let patch = g.patch();
    let wlen = g.cout * patch;
    let partials: Vec<Vec<T>> = (0..g.n)
        .into_par_iter()
        .map(|ni| {
            let x_n = &x[ni * g.cin * dhw..(ni + 1) * g.cin * dhw];
            let dy_n = &dy[ni * g.cout * dhw..(ni + 1) * g.cout * dhw];
            let mut dw = vec![T::zero(); wlen];
            if g.k == 1 {
                T::gemm(g.cout, dhw, g.cin, T::one(), dy_n, (dhw, 1), x_n, (1, dhw), T::zero(), &mut dw, (g.cin, 1));
                return dw;
            }
            let zc_max = depth_chunk(g);
            let mut col = vec![T::zero(); patch * zc_max * g.hw()];
            let mut z0 = 0;
            while z0 < g.d {
                let zc = zc_max.min(g.d - z0);
                let len = zc * g.hw();
                let col = &mut col[..patch * len];
                im2col(x_n, g, z0, zc, col);
                T::gemm(
                    g.cout,
                    len,
                    patch,
                    T::one(),
                    &dy_n[z0 * g.hw()..],
                    (dhw, 1),
                    col,
                    (1, len),
                    T::one(),
                    &mut dw,
                    (patch, 1),
                );
                z0 += zc;
            }
            dw
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut acc = iter.next().unwrap_or_else(|| vec![T::zero(); wlen]);
    for p in iter {
        for (a, b) in acc.iter_mut().zip(p) {
            *a += b;
        }
    }
    acc
}

pub(crate) fn backward_bias<T: Scalar>(dy: &[T], g: &ConvGeom) -> Vec<T> {
    let dhw = g.dhw();
    let mut db = vec![T::zero(); g.cout];
    for ni in 0..g.n {
        for (co, acc) in db.iter_mut().enumerate() {
            let s = (ni * g.cout + co) * dhw;
            *acc += dy[s..s + dhw].iter().copied().sum::<T>();
        }
    }
    db
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop evaluation of the padded cross-correlation.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> Vec<f64> {
        let [n, cin, d, h, wd] = x.dims5("t").unwrap();
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        let p = (k / 2) as isize;
        let mut out = vec![0.0; n * cout * d * h * wd];
        for ni in 0..n {
            for co in 0..cout {
                for z in 0..d {
                    for y in 0..h {
                        for xo in 0..wd {
                            let mut s = b[co];
                            for ci in 0..cin {
                                for a in 0..k {
                                    for bb in 0..k {
                                        for c in 0..k {
                                            let zi = z as isize + a as isize - p;
                                            let yi = y as isize + bb as isize - p;
                                            let xi = xo as isize + c as isize - p;
                                            if zi < 0 || yi < 0 || xi < 0 || zi >= d as isize || yi >= h as isize || xi >= wd as isize {
                                                continue;
                                            }
                                            let xv = x.data()[(((ni * cin + ci) * d + zi as usize) * h + yi as usize) * wd + xi as usize];
                                            let wv = w.data()[(((co * cin + ci) * k + a) * k + bb) * k + c];
                                            s += xv * wv;
                                        }
                                    }
                                }
                            }
                            out[(((ni * cout + co) * d + z) * h + y) * wd + xo] = s;
                        }
                    }
                }
            }
        }
        out
    }

    fn lcg(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    /// Weight gradient by explicit correlation of `dy` with the padded input.
    fn naive_weight_grad(x: &Tensor<f64>, dy: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (k, p) = (g.k, (g.k / 2) as isize);
        let mut dw = vec![0.0; g.cout * g.cin * k * k * k];
        for ni in 0..g.n {
            for co in 0..g.cout {
                for ci in 0..g.cin {
                    for a in 0..k {
                        for bb in 0..k {
                            for c in 0..k {
                                let mut s = 0.0;
                                for z in 0..g.d {
                                    for y in 0..g.h {
                                        for xo in 0..g.w {
                                            let zi = z as isize + a as isize - p;
                                            let yi = y as isize + bb as isize - p;
                                            let xi = xo as isize + c as isize - p;
                                            if zi < 0 || yi < 0 || xi < 0 || zi >= g.d as isize || yi >= g.h as isize || xi >= g.w as isize {
                                                continue;
                                            }
                                            let xv = x.data()[(((ni * g.cin + ci) * g.d + zi as usize) * g.h + yi as usize) * g.w + xi as usize];
                                            s += xv * dy[(((ni * g.cout + co) * g.d + z) * g.h + y) * g.w + xo];
                                        }
                                    }
                                }
                                dw[(((co * g.cin + ci) * k + a) * k + bb) * k + c] += s;
                            }
                        }
                    }
                }
            }
        }
        dw
    }

    // cout 3 takes the direct kernels for k > 1, cout 10 the im2col path
    const CASES: [(usize, [usize; 5]); 5] = [
        (1, [2, 3, 3, 4, 5]),
        (3, [2, 2, 4, 3, 5]),
        (5, [1, 2, 3, 6, 4]),
        (7, [1, 1, 5, 4, 3]),
        (9, [1, 2, 4, 5, 6]),
    ];

    #[test]
    fn matches_naive_for_each_kernel_size() {
        for cout in [3, 10] {
            for (k, shape) in CASES {
                let x = Tensor::new(shape.to_vec(), lcg(k as u64, shape.iter().product())).unwrap();
                let w = Tensor::new(vec![cout, shape[1], k, k, k], lcg(99 + k as u64, cout * shape[1] * k * k * k)).unwrap();
                let b = Tensor::new(vec![cout], lcg(7, cout)).unwrap();
                let y = forward(&x, &w, Some(&b)).unwrap();
                let expect = naive(&x, &w, b.data());
                for (a, e) in y.data().iter().zip(&expect) {
                    assert!((a - e).abs() < 1e-12, "k={k} cout={cout}: {a} vs {e}");
                }
            }
        }
    }

    #[test]
    fn weight_grad_matches_naive_on_both_paths() {
        for cout in [3, 10] {
            for (k, shape) in CASES {
                let x = Tensor::new(shape.to_vec(), lcg(k as u64 + 5, shape.iter().product())).unwrap();
                let w = Tensor::<f64>::zeros([cout, shape[1], k, k, k]);
                let g = geometry(&x, &w, None).unwrap();
                let dy = lcg(31 + k as u64, g.n * cout * g.dhw());
                let dw = backward_weight(x.data(), &dy, &g);
                let expect = naive_weight_grad(&x, &dy, &g);
                for (a, e) in dw.iter().zip(&expect) {
                    assert!((a - e).abs() < 1e-10, "k={k} cout={cout}: {a} vs {e}");
                }
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros([1, 2, 3, 3, 3]);
        let w = Tensor::<f32>::zeros([1, 3, 3, 3, 3]);
        let err = forward(&x, &w, None).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { dim: "input channels", .. }));
    }
}
