//! Synthetic thin folded shells standing in for cortical-plate data.
//!
//! The shell mid-surface is `r(u) = R + A * mean_k sin(w u.v_k + phi_k)` over
//! unit directions `u`. Inside is bright (white-matter-like), the shell is
//! dark, a bright layer (CSF-like) surrounds it, and the rest is zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::volume::{Image, Mask, Volume};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tissue {
    pub mean: f32,
    /// Voxelwise spread around the mean.
    pub std: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    /// (x, y, z) voxels.
    pub dims: [usize; 3],
    pub spacing_mm: [f32; 3],
    /// Shell centre in mm; the volume centre when absent.
    pub center_mm: Option<[f64; 3]>,
    pub radius_mm: f64,
    pub thickness_mm: f64,
    pub fold_amplitude_mm: f64,
    /// Angular frequency of each folding term.
    pub fold_frequency: f64,
    pub fold_terms: usize,
    /// Width of the bright layer outside the shell.
    pub csf_mm: f64,
    pub inside: Tissue,
    pub shell: Tissue,
    pub outside: Tissue,
    /// Gaussian blur sigma in mm (partial voluming).
    pub blur_mm: f64,
    pub noise_std: f32,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [64, 64, 64],
            spacing_mm: [0.8; 3],
            center_mm: None,
            radius_mm: 16.0,
            thickness_mm: 2.4,
            fold_amplitude_mm: 2.0,
            fold_frequency: 5.0,
            fold_terms: 6,
            csf_mm: 2.4,
            inside: Tissue { mean: 0.8, std: 0.04 },
            shell: Tissue { mean: 0.35, std: 0.04 },
            outside: Tissue { mean: 1.0, std: 0.04 },
            blur_mm: 0.5,
            noise_std: 0.04,
            seed: 0,
        }
    }
}

struct Fold {
    dir: [f64; 3],
    phase: f64,
}

/// Mid-surface geometry drawn from the spec's seed.
struct Shell {
    center: [f64; 3],
    radius: f64,
    amplitude: f64,
    freq: f64,
    folds: Vec<Fold>,
}

impl Shell {
    fn new(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Shell {
        let center = spec.center_mm.unwrap_or_else(|| {
            let c = |i: usize| (spec.dims[i] as f64 - 1.0) * spec.spacing_mm[i] as f64 / 2.0;
            [c(0), c(1), c(2)]
        });
        let folds = (0..spec.fold_terms)
            .map(|_| {
                let mut v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
                v.iter_mut().for_each(|x| *x /= n);
                Fold {
                    dir: v,
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                }
            })
            .collect();
        Shell {
            center,
            radius: spec.radius_mm,
            amplitude: spec.fold_amplitude_mm,
            freq: spec.fold_frequency,
            folds,
        }
    }

    /// Mid-surface radius along `u` and the tangential gradient norm of the
    /// perturbation.
    fn radius_at(&self, u: [f64; 3]) -> (f64, f64) {
        if self.folds.is_empty() || self.amplitude == 0.0 {
            return (self.radius, 0.0);
        }
        let k = self.folds.len() as f64;
        let mut f = 0.0;
        let mut grad = [0.0; 3];
        for fold in &self.folds {
            let arg = self.freq * (u[0] * fold.dir[0] + u[1] * fold.dir[1] + u[2] * fold.dir[2]) + fold.phase;
            f += arg.sin() / k;
            let c = self.freq * arg.cos() / k;
            for i in 0..3 {
                grad[i] += c * fold.dir[i];
            }
        }
        let radial = grad[0] * u[0] + grad[1] * u[1] + grad[2] * u[2];
        let tangential = (0..3).map(|i| (grad[i] - radial * u[i]).powi(2)).sum::<f64>().sqrt();
        (self.radius + self.amplitude * f, self.amplitude * tangential)
    }

    /// Signed distance estimate to the mid-surface (positive outside) and the
    /// mid-surface radius along the same direction.
    fn distance(&self, p: [f64; 3]) -> (f64, f64) {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let rho = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if rho < 1e-9 {
            return (-self.radius, self.radius);
        }
        let u = [d[0] / rho, d[1] / rho, d[2] / rho];
        let (r, g) = self.radius_at(u);
        ((rho - r) / (1.0 + (g / rho).powi(2)).sqrt(), r)
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) || self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("phantom dims and spacing must be positive"));
        }
        if !(self.thickness_mm > 0.0 && self.thickness_mm < self.radius_mm) {
            return Err(Error::config("phantom thickness must lie in (0, radius)"));
        }
        if !(self.fold_amplitude_mm >= 0.0) || !(self.csf_mm >= 0.0) || !(self.blur_mm >= 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::config("phantom amplitude, csf width, blur and noise must be non-negative"));
        }
        if self.fold_amplitude_mm + self.thickness_mm / 2.0 >= self.radius_mm {
            return Err(Error::config("folding amplitude collapses the shell interior"));
        }
        let outer = self.radius_mm + self.fold_amplitude_mm + self.thickness_mm / 2.0 + self.csf_mm;
        let center = self.center_mm.unwrap_or_else(|| {
            let c = |i: usize| (self.dims[i] as f64 - 1.0) * self.spacing_mm[i] as f64 / 2.0;
            [c(0), c(1), c(2)]
        });
        for i in 0..3 {
            let extent = (self.dims[i] as f64 - 1.0) * self.spacing_mm[i] as f64;
            if center[i] - outer < 0.0 || center[i] + outer > extent {
                return Err(Error::config(format!(
                    "phantom of outer radius {outer:.2} mm exceeds the volume along axis {i}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Background,
    Inside,
    Shell,
    Outside,
}

/// Generates `(image, label)`. Deterministic in the spec, including its seed.
pub fn gen_phantom(spec: &PhantomSpec) -> Result<(Image, Mask)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shell = Shell::new(spec, &mut rng);
    let [nx, ny, nz] = spec.dims;
    let sp = spec.spacing_mm.map(|s| s as f64);
    let half = spec.thickness_mm / 2.0;

    let mut classes = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [x as f64 * sp[0], y as f64 * sp[1], z as f64 * sp[2]];
                let (dist, _) = shell.distance(p);
                classes.push(if dist.abs() <= half {
                    Class::Shell
                } else if dist < 0.0 {
                    Class::Inside
                } else if dist <= half + spec.csf_mm {
                    Class::Outside
                } else {
                    Class::Background
                });
            }
        }
    }

    let mut image: Vec<f32> = classes
        .iter()
        .map(|c| {
            let t = match c {
                Class::Background => return 0.0,
                Class::Inside => spec.inside,
                Class::Shell => spec.shell,
                Class::Outside => spec.outside,
            };
            if t.std > 0.0 {
                t.mean + t.std * rng.sample::<f32, _>(StandardNormal)
            } else {
                t.mean
            }
        })
        .collect();
    if spec.blur_mm > 0.0 {
        let sigma = [spec.blur_mm / sp[0], spec.blur_mm / sp[1], spec.blur_mm / sp[2]];
        image = gaussian_blur(&image, spec.dims, sigma);
    }
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0f32, spec.noise_std).map_err(|e| Error::config(e.to_string()))?;
        for v in image.iter_mut() {
            *v += rng.sample(noise);
        }
    }
    // keep the brain mask exact: outside voxels stay zero after blur and noise
    for (v, c) in image.iter_mut().zip(&classes) {
        if *c == Class::Background {
            *v = 0.0;
        }
    }
    let label = classes.iter().map(|c| (*c == Class::Shell) as u8).collect();
    Ok((
        Volume::new(spec.dims, spec.spacing_mm, image)?,
        Volume::new(spec.dims, spec.spacing_mm, label)?,
    ))
}

fn kernel(sigma: f64) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| (v / s) as f32).collect()
}

/// Separable Gaussian with edge clamping; `sigma` in voxels per (x, y, z).
pub fn gaussian_blur(data: &[f32], dims: [usize; 3], sigma: [f64; 3]) -> Vec<f32> {
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut cur = data.to_vec();
    for axis in 0..3 {
        if sigma[axis] <= 0.0 {
            continue;
        }
        let k = kernel(sigma[axis]);
        let r = (k.len() / 2) as isize;
        let n = dims[axis] as isize;
        let st = strides[axis];
        let mut next = vec![0.0f32; cur.len()];
        for (i, out) in next.iter_mut().enumerate() {
            let pos = ((i / st) % dims[axis]) as isize;
            let base = i - pos as usize * st;
            let mut acc = 0.0f32;
            for (j, &w) in k.iter().enumerate() {
                let q = (pos + j as isize - r).clamp(0, n - 1) as usize;
                acc += w * cur[base + q * st];
            }
            *out = acc;
        }
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constants() {
        let v = vec![2.5f32; 5 * 4 * 3];
        for x in gaussian_blur(&v, [5, 4, 3], [1.0, 0.7, 2.0]) {
            assert!((x - 2.5).abs() < 1e-5);
        }
    }

    #[test]
    fn oversized_shell_rejected() {
        let spec = PhantomSpec {
            radius_mm: 30.0,
            ..PhantomSpec::default()
        };
        assert!(matches!(gen_phantom(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn flat_shell_distance_is_radial() {
        let spec = PhantomSpec {
            fold_amplitude_mm: 0.0,
            ..PhantomSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let shell = Shell::new(&spec, &mut rng);
        let c = shell.center;
        let (d, r) = shell.distance([c[0] + 20.0, c[1], c[2]]);
        assert!((d - 4.0).abs() < 1e-12 && r == 16.0);
    }
}
