use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cpseg::data::{read_image, write_volume, Image, Split, DEFAULT_SPACING};
use cpseg::inference::predict_volume;
use cpseg::network::load_checkpoint;

use super::image_stem;
use super::phantom::DatasetManifest;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::InferArgs;

pub const TIMING: &str = "timing.csv";

/// Warnings for volumes that differ from what the model was trained on.
pub fn anomalies(image: &Image, patch_size: usize) -> Vec<String> {
    let mut out = Vec::new();
    if image.spacing.iter().any(|&s| (s - DEFAULT_SPACING).abs() > 0.05 * DEFAULT_SPACING) {
        out.push(format!("spacing {:?} mm differs from the {DEFAULT_SPACING} mm training grid", image.spacing));
    }
    let (lo, hi) = image.spacing.iter().fold((f32::INFINITY, 0.0f32), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if hi > 2.0 * lo {
        out.push(format!("spacing {:?} mm is strongly anisotropic", image.spacing));
    }
    if image.dims.iter().any(|&d| d < patch_size) {
        out.push(format!("dims {:?} are smaller than the {patch_size}-voxel patch; borders are zero-padded", image.dims));
    }
    out
}

fn inputs(args: &InferArgs) -> CliResult<Vec<PathBuf>> {
    match &args.data {
        Some(dir) => {
            let split = if args.split == "train" { Split::Train } else { Split::Test };
            let manifest = DatasetManifest::load(dir)?;
            let paths: Vec<_> = manifest.split(split).map(|c| c.image_path(dir)).collect();
            if paths.is_empty() {
                return Err(CliError::data(format!("{}: no {} cases", dir.display(), args.split)));
            }
            Ok(paths)
        }
        None => Ok(args.inputs.clone()),
    }
}

pub fn run(mut cfg: RunConfig, args: &InferArgs, out: &Path) -> CliResult<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    cfg.model = ckpt.manifest.model.clone();
    cfg.model.check_input([cfg.inference.patch_size; 3])?;
    let (net, store) = ckpt.into_network()?;
    cfg.write_next_to(out)?;

    let mut timing = String::from("case,seconds\n");
    for path in inputs(args)? {
        let image = read_image(&path)?;
        for w in anomalies(&image, cfg.inference.patch_size) {
            eprintln!("warning: {}: {w}", path.display());
        }
        let stem = image_stem(&path);
        let pred = predict_volume(&net, &store, &image, &cfg.inference)?;
        write_volume(&pred.probability, &out.join(format!("{stem}_prob.nii")))?;
        write_volume(&pred.mask, &out.join(format!("{stem}_mask.nii")))?;
        eprintln!("{stem}: {:.2}s, {} foreground voxels", pred.seconds, pred.mask.count());
        let _ = writeln!(timing, "{stem},{:.6}", pred.seconds);
    }
    let path = out.join(TIMING);
    fs::write(&path, timing).map_err(|e| CliError::io(&path, e))
}
