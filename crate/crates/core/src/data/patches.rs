//! Sliding-window patch grids, extraction, fusion and thresholding.

use super::volume::{Image, Mask, Volume};
use crate::error::{Error, Result};

/// Origins of cubic patches covering a volume, in (z, y, x) voxel order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    /// Volume extents (z, y, x).
    pub shape: [usize; 3],
    pub patch_size: usize,
    pub stride: usize,
    pub origins: Vec<[usize; 3]>,
}

/// Origins along one axis: multiples of `stride`, with the last one moved
/// back so the patch ends at the border.
pub fn axis_origins(n: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut o = 0;
    while o + patch < n {
        o = (o + stride).min(n - patch);
        out.push(o);
    }
    out
}

impl PatchGrid {
    pub fn new(shape: [usize; 3], patch_size: usize, stride: usize) -> Result<Self> {
        if patch_size == 0 || stride == 0 {
            return Err(Error::config("patch size and stride must be positive"));
        }
        if stride > patch_size {
            return Err(Error::config(format!("stride {stride} exceeds patch size {patch_size}")));
        }
        let per_axis: Vec<Vec<usize>> = shape.iter().map(|&n| axis_origins(n, patch_size, stride)).collect();
        let mut origins = Vec::new();
        for &z in &per_axis[0] {
            for &y in &per_axis[1] {
                for &x in &per_axis[2] {
                    origins.push([z, y, x]);
                }
            }
        }
        Ok(PatchGrid {
            shape,
            patch_size,
            stride,
            origins,
        })
    }

    pub fn for_volume<T>(v: &Volume<T>, patch_size: usize, stride: usize) -> Result<Self> {
        PatchGrid::new([v.dims[2], v.dims[1], v.dims[0]], patch_size, stride)
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// Copies the cube at `origin` (z, y, x) out of a (z, y, x) array, reading
/// zeros beyond the border.
pub fn extract_patch<T: Copy + Default>(data: &[T], shape: [usize; 3], origin: [usize; 3], size: usize) -> Vec<T> {
    let mut out = vec![T::default(); size * size * size];
    let [d, h, w] = shape;
    for pz in 0..size {
        let z = origin[0] + pz;
        if z >= d {
            break;
        }
        for py in 0..size {
            let y = origin[1] + py;
            if y >= h {
                break;
            }
            let x0 = origin[2];
            if x0 >= w {
                continue;
            }
            let len = size.min(w - x0);
            let src = (z * h + y) * w + x0;
            let dst = (pz * size + py) * size;
            out[dst..dst + len].copy_from_slice(&data[src..src + len]);
        }
    }
    out
}

pub fn extract_patches(volume: &Image, grid: &PatchGrid) -> Vec<Vec<f32>> {
    grid.origins
        .iter()
        .map(|&o| extract_patch(&volume.data, grid.shape, o, grid.patch_size))
        .collect()
}

/// Voxelwise mean of all patches covering each voxel.
pub fn fuse_predictions(grid: &PatchGrid, patches: &[Vec<f32>], like: &Image) -> Result<Image> {
    if patches.len() != grid.len() {
        return Err(Error::data(format!("{} patch predictions for {} grid origins", patches.len(), grid.len())));
    }
    let p = grid.patch_size;
    let [d, h, w] = grid.shape;
    let mut sum = vec![0.0f64; d * h * w];
    let mut count = vec![0u32; d * h * w];
    for (patch, &o) in patches.iter().zip(&grid.origins) {
        if patch.len() != p * p * p {
            return Err(Error::data(format!("patch holds {} values, expected {}", patch.len(), p * p * p)));
        }
        for pz in 0..p.min(d.saturating_sub(o[0])) {
            for py in 0..p.min(h.saturating_sub(o[1])) {
                let len = p.min(w.saturating_sub(o[2]));
                let dst = ((o[0] + pz) * h + o[1] + py) * w + o[2];
                let src = (pz * p + py) * p;
                for i in 0..len {
                    sum[dst + i] += patch[src + i] as f64;
                    count[dst + i] += 1;
                }
            }
        }
    }
    if let Some(i) = count.iter().position(|&c| c == 0) {
        return Err(Error::data(format!("voxel {i} is not covered by any patch")));
    }
    let fused = sum.iter().zip(&count).map(|(s, &c)| (s / c as f64) as f32).collect();
    like.same_grid(fused)
}

/// `1` where `prob > threshold`.
pub fn binarize(prob: &Image, threshold: f32) -> Mask {
    Volume {
        dims: prob.dims,
        spacing: prob.spacing,
        affine: prob.affine,
        data: prob.data.iter().map(|&p| (p > threshold) as u8).collect(),
    }
}

/// Z-score over nonzero voxels; zero voxels stay zero.
pub fn normalize(image: &Image) -> Image {
    let (mut n, mut sum, mut sq) = (0usize, 0.0f64, 0.0f64);
    for &v in image.data.iter().filter(|v| **v != 0.0) {
        n += 1;
        sum += v as f64;
        sq += (v as f64) * (v as f64);
    }
    if n == 0 {
        return image.clone();
    }
    let mean = sum / n as f64;
    let std = (sq / n as f64 - mean * mean).max(0.0).sqrt();
    let inv = if std > 0.0 { 1.0 / std } else { 1.0 };
    Volume {
        data: image
            .data
            .iter()
            .map(|&v| if v == 0.0 { 0.0 } else { ((v as f64 - mean) * inv) as f32 })
            .collect(),
        ..image.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_enumeration() {
        assert_eq!(axis_origins(64, 64, 32), vec![0]);
        assert_eq!(axis_origins(96, 64, 32), vec![0, 32]);
        assert_eq!(axis_origins(70, 64, 32), vec![0, 6]);
        assert_eq!(axis_origins(40, 64, 32), vec![0]);
        assert_eq!(axis_origins(64, 32, 16), vec![0, 16, 32]);
    }

    #[test]
    fn extraction_pads_with_zeros() {
        let data: Vec<u8> = (1..=8).collect();
        let p = extract_patch(&data, [2, 2, 2], [0, 0, 0], 3);
        assert_eq!(p[0], 1);
        assert_eq!(p[1], 2);
        assert_eq!(p[2], 0);
        assert_eq!(p[3], 3);
        assert_eq!(p[26], 0);
    }

    #[test]
    fn normalization_zero_mean_unit_variance() {
        let v = Volume::new([4, 1, 1], [1.0; 3], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let n = normalize(&v);
        assert_eq!(n.data[0], 0.0);
        let vals = &n.data[1..];
        let mean: f32 = vals.iter().sum::<f32>() / 3.0;
        let var: f32 = vals.iter().map(|x| (x - mean).powi(2)).sum::<f32>() / 3.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn binarize_is_strict() {
        let v = Volume::new([3, 1, 1], [1.0; 3], vec![0.5, 0.51, 0.0]).unwrap();
        assert_eq!(binarize(&v, 0.5).data, vec![0, 1, 0]);
    }
}
