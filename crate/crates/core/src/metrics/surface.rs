use crate::data::Mask;
use crate::error::{Error, Result};

use super::edt::squared_edt;

/// Boundary voxels of a mask, kept on their grid so distances can be taken
/// through a distance transform.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfacePointSet {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Voxel coordinates (x, y, z) in scan order.
    pub voxels: Vec<[usize; 3]>,
}

impl SurfacePointSet {
    pub fn from_voxels(dims: [usize; 3], spacing: [f64; 3], voxels: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(v) = voxels.iter().find(|v| (0..3).any(|a| v[a] >= dims[a])) {
            return Err(Error::data(format!("surface voxel {v:?} outside dims {dims:?}")));
        }
        Ok(SurfacePointSet { dims, spacing, voxels })
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Voxel-centre coordinates in mm.
    pub fn points_mm(&self) -> Vec<[f64; 3]> {
        self.voxels
            .iter()
            .map(|v| [v[0] as f64 * self.spacing[0], v[1] as f64 * self.spacing[1], v[2] as f64 * self.spacing[2]])
            .collect()
    }

    fn linear(&self, v: [usize; 3]) -> usize {
        (v[2] * self.dims[1] + v[1]) * self.dims[0] + v[0]
    }

    /// Squared mm distance from every grid voxel to the nearest point of the set.
    pub fn squared_distance_field(&self) -> Vec<f64> {
        let mut seeds = vec![false; self.dims.iter().product()];
        for &v in &self.voxels {
            seeds[self.linear(v)] = true;
        }
        squared_edt(self.dims, self.spacing, &seeds)
    }
}

pub(crate) fn spacing_f64(mask: &Mask) -> [f64; 3] {
    mask.spacing.map(f64::from)
}

/// Foreground voxels with at least one background 6-neighbour. Positions
/// outside the volume count as background.
pub fn extract_surface(mask: &Mask) -> SurfacePointSet {
    let [nx, ny, nz] = mask.dims;
    let fg = |x: usize, y: usize, z: usize| mask.get(x, y, z) != 0;
    let mut voxels = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !fg(x, y, z) {
                    continue;
                }
                let border = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                if border
                    || !fg(x - 1, y, z)
                    || !fg(x + 1, y, z)
                    || !fg(x, y - 1, z)
                    || !fg(x, y + 1, z)
                    || !fg(x, y, z - 1)
                    || !fg(x, y, z + 1)
                {
                    voxels.push([x, y, z]);
                }
            }
        }
    }
    SurfacePointSet {
        dims: mask.dims,
        spacing: spacing_f64(mask),
        voxels,
    }
}

/// For each point of `src`, the mm distance to the nearest point of `dst`.
pub fn directed_distances(src: &SurfacePointSet, dst: &SurfacePointSet) -> Result<Vec<f64>> {
    if dst.is_empty() {
        return Err(Error::data("distance to an empty surface is undefined"));
    }
    if src.dims != dst.dims || src.spacing != dst.spacing {
        return Err(Error::data(format!(
            "surfaces on different grids: {:?}/{:?} vs {:?}/{:?}",
            src.dims, src.spacing, dst.dims, dst.spacing
        )));
    }
    let field = dst.squared_distance_field();
    Ok(src.voxels.iter().map(|&v| field[src.linear(v)].sqrt()).collect())
}
