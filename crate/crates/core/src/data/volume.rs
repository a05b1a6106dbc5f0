use crate::error::{Error, Result};

/// Element types a volume can hold on disk.
pub trait Voxel: Copy + Default + PartialEq + Send + Sync + std::fmt::Debug + 'static {
    const NIFTI_DATATYPE: i16;
    const BYTES: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn to_f32(self) -> f32;
}

impl Voxel for u8 {
    const NIFTI_DATATYPE: i16 = 2;
    const BYTES: usize = 1;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
}

impl Voxel for f32 {
    const NIFTI_DATATYPE: i16 = 16;
    const BYTES: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
    fn to_f32(self) -> f32 {
        self
    }
}

/// A 3-D scalar field. `dims` and `spacing` are ordered (x, y, z) and x
/// varies fastest in `data`, so the tensor view is (z, y, x).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    pub dims: [usize; 3],
    /// Voxel size in mm.
    pub spacing: [f32; 3],
    /// Voxel-to-world rows (x, y, z) of the 3x4 affine.
    pub affine: [[f32; 4]; 3],
    pub data: Vec<T>,
}

pub type Image = Volume<f32>;
pub type Mask = Volume<u8>;

pub const DEFAULT_SPACING: f32 = 0.8;

pub fn diagonal_affine(spacing: [f32; 3]) -> [[f32; 4]; 3] {
    [
        [spacing[0], 0.0, 0.0, 0.0],
        [0.0, spacing[1], 0.0, 0.0],
        [0.0, 0.0, spacing[2], 0.0],
    ]
}

impl<T: Voxel> Volume<T> {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<T>) -> Result<Self> {
        Volume::with_affine(dims, spacing, diagonal_affine(spacing), data)
    }

    pub fn with_affine(dims: [usize; 3], spacing: [f32; 3], affine: [[f32; 4]; 3], data: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::data(format!("volume dims {dims:?} contain zero")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::data(format!("voxel spacing {spacing:?} must be positive")));
        }
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::data(format!("{} voxels for dims {dims:?}", data.len())));
        }
        Ok(Volume {
            dims,
            spacing,
            affine,
            data,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: [f32; 3], value: T) -> Self {
        Volume {
            dims,
            spacing,
            affine: diagonal_affine(spacing),
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extents in tensor order (z, y, x).
    pub fn shape_zyx(&self) -> [usize; 3] {
        [self.dims[2], self.dims[1], self.dims[0]]
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    /// A volume on the same grid holding other data.
    pub fn same_grid<U: Voxel>(&self, data: Vec<U>) -> Result<Volume<U>> {
        Volume::with_affine(self.dims, self.spacing, self.affine, data)
    }

    pub fn check_same_grid<U>(&self, other: &Volume<U>, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::data(format!("{what}: dims {:?} vs {:?}", self.dims, other.dims)));
        }
        if self.spacing != other.spacing {
            return Err(Error::data(format!("{what}: spacing {:?} vs {:?}", self.spacing, other.spacing)));
        }
        Ok(())
    }
}

impl Volume<u8> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}
