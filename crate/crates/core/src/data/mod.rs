pub mod dataset;
pub mod nifti;
pub mod patches;
pub mod phantom;
pub mod volume;

pub use dataset::{CaseSpec, PhantomDatasetConfig, Split};
pub use nifti::{read_image, read_mask, read_volume, write_volume, AnyVolume};
pub use patches::{binarize, extract_patch, extract_patches, fuse_predictions, normalize, PatchGrid};
pub use phantom::{gen_phantom, PhantomSpec, Tissue};
pub use volume::{Image, Mask, Volume, Voxel, DEFAULT_SPACING};
