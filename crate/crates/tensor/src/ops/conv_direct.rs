//! Direct convolution for narrow layers, where im2col + GEMM degenerates
//! into a memory-bound matrix-vector product. Works on zero-padded copies of
//! each input channel; the kernel width is a const parameter so the row
//! kernels unroll and vectorize across the output row.

use rayon::prelude::*;

use super::conv::ConvGeom;
use crate::scalar::Scalar;

const LANES: usize = 8;

struct Padded<T> {
    data: Vec<T>,
    pw: usize,
    plane: usize,
}

impl<T: Scalar> Padded<T> {
    /// Zero-padded copy with `p` voxels on every side and rows widened to
    /// `pw >= w + 2p` so that fixed-size chunks never run past a row.
    fn new(src: &[T], d: usize, h: usize, w: usize, p: usize, pw: usize) -> Self {
        let (pd, ph) = (d + 2 * p, h + 2 * p);
        let mut data = vec![T::zero(); pd * ph * pw];
        for z in 0..d {
            for y in 0..h {
                let dst = ((z + p) * ph + y + p) * pw + p;
                data[dst..dst + w].copy_from_slice(&src[(z * h + y) * w..(z * h + y + 1) * w]);
            }
        }
        Padded {
            data,
            pw,
            plane: ph * pw,
        }
    }

    fn row(&self, z: usize, y: usize) -> &[T] {
        let s = z * self.plane + y * self.pw;
        &self.data[s..s + self.pw]
    }
}

fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Output chunk width for a row of `w` voxels.
fn chunk_for(w: usize) -> usize {
    if w >= 32 {
        32
    } else if w > 8 {
        16
    } else {
        8
    }
}

fn forward_kc<T: Scalar, const K: usize, const C: usize>(x: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (d, h, w) = (g.d, g.h, g.w);
    let dhw = d * h * w;
    let k3 = K * K * K;
    let p = K / 2;
    let pw = round_up(w, C) + K - 1;
    let mut out = vec![T::zero(); g.n * g.cout * dhw];
    out.par_chunks_mut(g.cout * dhw).enumerate().for_each(|(ni, out_n)| {
        let pads: Vec<Padded<T>> = (0..g.cin)
            .map(|ci| Padded::new(&x[(ni * g.cin + ci) * dhw..(ni * g.cin + ci + 1) * dhw], d, h, w, p, pw))
            .collect();
        for (co, out_c) in out_n.chunks_mut(dhw).enumerate() {
            let b = bias.map_or(T::zero(), |b| b[co]);
            for z in 0..d {
                for y in 0..h {
                    let out_row = &mut out_c[(z * h + y) * w..(z * h + y + 1) * w];
                    for x0 in (0..w).step_by(C) {
                        let mut acc = [b; C];
                        for (ci, pad) in pads.iter().enumerate() {
                            let wk = &weight[(co * g.cin + ci) * k3..(co * g.cin + ci + 1) * k3];
                            for kd in 0..K {
                                for kh in 0..K {
                                    let row = &pad.row(z + kd, y + kh)[x0..x0 + C + K - 1];
                                    let wr = &wk[(kd * K + kh) * K..(kd * K + kh + 1) * K];
                                    for (kw, &wv) in wr.iter().enumerate() {
                                        let seg: &[T; C] = row[kw..kw + C].try_into().unwrap();
                                        for j in 0..C {
                                            acc[j] += wv * seg[j];
                                        }
                                    }
                                }
                            }
                        }
                        let n = C.min(w - x0);
                        out_row[x0..x0 + n].copy_from_slice(&acc[..n]);
                    }
                }
            }
        }
    });
    out
}

fn forward_k<T: Scalar, const K: usize>(x: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    match chunk_for(g.w) {
        8 => forward_kc::<T, K, 8>(x, weight, bias, g),
        16 => forward_kc::<T, K, 16>(x, weight, bias, g),
        _ => forward_kc::<T, K, 32>(x, weight, bias, g),
    }
}

/// Input window read per chunk of `LANES` outputs: covers every kernel width
/// up to 9.
const WINDOW: usize = LANES + 8;

/// Partial sums of `dy[x] * row[x + kw0 + t]` for the `N` taps starting at
/// `kw0`, `LANES` lanes per tap, over every row of one (kd, kh) offset.
#[inline(always)]
fn tap_sums<T: Scalar, const N: usize>(
    pad: &Padded<T>,
    dy: &[T],
    (d, h, wr): (usize, usize, usize),
    (kd, kh, kw0): (usize, usize, usize),
) -> [T; N] {
    let mut acc = [[T::zero(); LANES]; N];
    for z in 0..d {
        for y in 0..h {
            let dy_row = &dy[(z * h + y) * wr..(z * h + y + 1) * wr];
            let row = &pad.row(z + kd, y + kh)[kw0..];
            for x0 in (0..wr).step_by(LANES) {
                let dv: &[T; LANES] = dy_row[x0..x0 + LANES].try_into().unwrap();
                let win: &[T; WINDOW] = row[x0..x0 + WINDOW].try_into().unwrap();
                for (t, a) in acc.iter_mut().enumerate() {
                    for j in 0..LANES {
                        a[j] += dv[j] * win[t + j];
                    }
                }
            }
        }
    }
    acc.map(|a| a.iter().copied().sum::<T>())
}

/// `dw[kd][kh][kw] += sum dy[z][y][x] * pad[z + kd][y + kh][x + kw]` for one
/// (input, output) channel pair. Wide kernels are split into two passes to
/// keep the accumulators in registers.
fn weight_grad_pair<T: Scalar, const K: usize>(pad: &Padded<T>, dy: &[T], d: usize, h: usize, wr: usize, dw: &mut [T]) {
    let dims = (d, h, wr);
    for kd in 0..K {
        for kh in 0..K {
            let taps = &mut dw[(kd * K + kh) * K..(kd * K + kh + 1) * K];
            let mut add = |kw0: usize, sums: &[T]| {
                for (t, s) in taps[kw0..].iter_mut().zip(sums) {
                    *t += *s;
                }
            };
            match K {
                3 => add(0, &tap_sums::<T, 3>(pad, dy, dims, (kd, kh, 0))),
                5 => add(0, &tap_sums::<T, 5>(pad, dy, dims, (kd, kh, 0))),
                7 => add(0, &tap_sums::<T, 7>(pad, dy, dims, (kd, kh, 0))),
                _ => {
                    add(0, &tap_sums::<T, 5>(pad, dy, dims, (kd, kh, 0)));
                    add(5, &tap_sums::<T, 4>(pad, dy, dims, (kd, kh, 5)));
                }
            }
        }
    }
}

fn weight_grad_k<T: Scalar, const K: usize>(x: &[T], dy: &[T], g: &ConvGeom) -> Vec<T> {
    let (d, h, w) = (g.d, g.h, g.w);
    let dhw = d * h * w;
    let k3 = K * K * K;
    let p = K / 2;
    let wr = round_up(w, LANES);
    // room for a full window at the last chunk, including the second pass
    // of 9-wide kernels
    let pw = wr + WINDOW - LANES + 5;
    let wlen = g.cout * g.cin * k3;
    let partials: Vec<Vec<T>> = (0..g.n)
        .into_par_iter()
        .map(|ni| {
            let mut dw = vec![T::zero(); wlen];
            let pads: Vec<Padded<T>> = (0..g.cin)
                .map(|ci| Padded::new(&x[(ni * g.cin + ci) * dhw..(ni * g.cin + ci + 1) * dhw], d, h, w, p, pw))
                .collect();
            let mut dy_rows = vec![T::zero(); d * h * wr];
            for co in 0..g.cout {
                let dy_c = &dy[(ni * g.cout + co) * dhw..(ni * g.cout + co + 1) * dhw];
                for (r, src) in dy_c.chunks(w).enumerate() {
                    dy_rows[r * wr..r * wr + w].copy_from_slice(src);
                }
                for (ci, pad) in pads.iter().enumerate() {
                    let dwk = &mut dw[(co * g.cin + ci) * k3..(co * g.cin + ci + 1) * k3];
                    weight_grad_pair::<T, K>(pad, &dy_rows, d, h, wr, dwk);
                }
            }
            dw
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut acc = iter.next().unwrap_or_else(|| vec![T::zero(); wlen]);
    for part in iter {
        for (a, b) in acc.iter_mut().zip(part) {
            *a += b;
        }
    }
    acc
}

pub(crate) fn supports(k: usize) -> bool {
    matches!(k, 3 | 5 | 7 | 9)
}

pub(crate) fn forward<T: Scalar>(x: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    match g.k {
        3 => forward_k::<T, 3>(x, weight, bias, g),
        5 => forward_k::<T, 5>(x, weight, bias, g),
        7 => forward_k::<T, 7>(x, weight, bias, g),
        9 => forward_k::<T, 9>(x, weight, bias, g),
        k => unreachable!("direct convolution does not handle k={k}"),
    }
}

pub(crate) fn weight_grad<T: Scalar>(x: &[T], dy: &[T], g: &ConvGeom) -> Vec<T> {
    match g.k {
        3 => weight_grad_k::<T, 3>(x, dy, g),
        5 => weight_grad_k::<T, 5>(x, dy, g),
        7 => weight_grad_k::<T, 7>(x, dy, g),
        9 => weight_grad_k::<T, 9>(x, dy, g),
        k => unreachable!("direct convolution does not handle k={k}"),
    }
}
