pub mod eval;
pub mod gradcheck;
pub mod infer;
pub mod phantom;
pub mod train;

use std::path::Path;

/// Case key of a volume file: the stem with a role suffix removed.
/// Returns `None` for files that are not masks (images, probabilities,
/// error maps) or not NIfTI.
pub fn mask_case_key(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    let stem = name.strip_suffix(".nii")?;
    for skip in ["_image", "_prob", "_error"] {
        if stem.ends_with(skip) {
            return None;
        }
    }
    for suffix in ["_label", "_mask", "_pred"] {
        if let Some(key) = stem.strip_suffix(suffix) {
            return Some(key.to_string());
        }
    }
    Some(stem.to_string())
}

/// Output stem for an input image: the file stem without `_image`.
pub fn image_stem(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("volume");
    let stem = name.strip_suffix(".nii").unwrap_or(name);
    stem.strip_suffix("_image").unwrap_or(stem).to_string()
}
