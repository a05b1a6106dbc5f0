use serde::{Deserialize, Serialize};

use crate::data::{Image, Mask};
use crate::error::{Error, Result};

use super::surface::{directed_distances, extract_surface, SurfacePointSet};

/// 2|a ∩ b| / (|a| + |b|); two empty masks score 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    a.check_same_grid(b, "dice")?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (x, y) = (x != 0, y != 0);
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Linearly interpolated percentile of an ascending list, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty list");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn surfaces(a: &Mask, b: &Mask, what: &str) -> Result<(SurfacePointSet, SurfacePointSet)> {
    a.check_same_grid(b, what)?;
    let (sa, sb) = (extract_surface(a), extract_surface(b));
    if sa.is_empty() || sb.is_empty() {
        return Err(Error::data(format!("{what} is undefined for an empty mask")));
    }
    Ok((sa, sb))
}

fn sorted(mut d: Vec<f64>) -> Vec<f64> {
    d.sort_by(f64::total_cmp);
    d
}

/// Larger of the two directed 95th-percentile surface distances, in mm.
pub fn hd95(a: &Mask, b: &Mask) -> Result<f64> {
    let (sa, sb) = surfaces(a, b, "hd95")?;
    let ab = sorted(directed_distances(&sa, &sb)?);
    let ba = sorted(directed_distances(&sb, &sa)?);
    Ok(percentile(&ab, 0.95).max(percentile(&ba, 0.95)))
}

/// Largest distance from the surface of `a` to the surface of `b`.
pub fn directed_hausdorff(a: &Mask, b: &Mask) -> Result<f64> {
    let (sa, sb) = surfaces(a, b, "hausdorff")?;
    Ok(directed_distances(&sa, &sb)?.into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AsdMode {
    /// Mean over the union of both directed distance lists.
    #[default]
    Symmetric,
    /// Mean distance from the prediction surface to the reference surface.
    PredToReference,
}

/// Average surface distance in mm; `a` is the prediction for the directed mode.
pub fn asd_with(a: &Mask, b: &Mask, mode: AsdMode) -> Result<f64> {
    let (sa, sb) = surfaces(a, b, "asd")?;
    let ab = directed_distances(&sa, &sb)?;
    match mode {
        AsdMode::Symmetric => {
            let ba = directed_distances(&sb, &sa)?;
            Ok((ab.iter().sum::<f64>() + ba.iter().sum::<f64>()) / (ab.len() + ba.len()) as f64)
        }
        AsdMode::PredToReference => Ok(ab.iter().sum::<f64>() / ab.len() as f64),
    }
}

pub fn asd(a: &Mask, b: &Mask) -> Result<f64> {
    asd_with(a, b, AsdMode::Symmetric)
}

/// Distance from each prediction-surface voxel to the reference surface,
/// zero elsewhere.
pub fn surface_error_map(pred: &Mask, reference: &Mask) -> Result<Image> {
    let (sp, sr) = surfaces(pred, reference, "surface error map")?;
    let d = directed_distances(&sp, &sr)?;
    let mut data = vec![0.0f32; pred.len()];
    for (v, dist) in sp.voxels.iter().zip(d) {
        data[pred.index(v[0], v[1], v[2])] = dist as f32;
    }
    pred.same_grid(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(dims: [usize; 3], lo: [usize; 3], size: usize) -> Mask {
        let mut m = Mask::filled(dims, [1.0; 3], 0);
        for z in lo[2]..lo[2] + size {
            for y in lo[1]..lo[1] + size {
                for x in lo[0]..lo[0] + size {
                    let i = m.index(x, y, z);
                    m.data[i] = 1;
                }
            }
        }
        m
    }

    #[test]
    fn dice_examples() {
        let a = cube([6, 6, 6], [1, 1, 1], 2);
        let b = cube([6, 6, 6], [2, 1, 1], 2);
        let far = cube([6, 6, 6], [4, 4, 4], 2);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &far).unwrap(), 0.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        let empty = Mask::filled([6, 6, 6], [1.0; 3], 0);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(dice(&empty, &a).unwrap(), 0.0);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[0.0, 10.0], 0.95), 9.5);
        assert_eq!(percentile(&[4.0], 0.95), 4.0);
        let mut v = vec![0.0; 99];
        v.push(10.0);
        assert_eq!(percentile(&v, 0.95), 0.0);
    }

    #[test]
    fn identical_masks_have_zero_distance() {
        let a = cube([8, 8, 8], [2, 2, 2], 3);
        assert_eq!(hd95(&a, &a).unwrap(), 0.0);
        assert_eq!(asd(&a, &a).unwrap(), 0.0);
        let map = surface_error_map(&a, &a).unwrap();
        assert!(map.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_masks_are_undefined() {
        let a = cube([8, 8, 8], [2, 2, 2], 3);
        let empty = Mask::filled([8, 8, 8], [1.0; 3], 0);
        assert!(hd95(&a, &empty).is_err());
        assert!(asd(&empty, &a).is_err());
    }
}
