use std::fs;
use std::path::{Path, PathBuf};

use cpseg::data::{read_image, read_mask, write_volume, Image, Mask, PhantomSpec, Split};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestCase {
    pub name: String,
    pub split: Split,
    pub seed: u64,
    /// File names relative to the dataset directory.
    pub image: String,
    pub label: String,
    pub spec: PhantomSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub cases: Vec<ManifestCase>,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> CliResult<DatasetManifest> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        toml::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestCase> {
        self.cases.iter().filter(move |c| c.split == split)
    }
}

impl ManifestCase {
    pub fn image_path(&self, dir: &Path) -> PathBuf {
        dir.join(&self.image)
    }

    pub fn label_path(&self, dir: &Path) -> PathBuf {
        dir.join(&self.label)
    }

    pub fn load(&self, dir: &Path) -> CliResult<(Image, Mask)> {
        let image = read_image(&self.image_path(dir))?;
        let label = read_mask(&self.label_path(dir))?;
        image.check_same_grid(&label, &self.name)?;
        Ok((image, label))
    }
}

pub fn run(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let specs = cfg.data.cases()?;
    let mut cases = Vec::with_capacity(specs.len());
    for case in specs {
        let (image, label) = case.generate()?;
        let entry = ManifestCase {
            image: format!("{}_image.nii", case.name),
            label: format!("{}_label.nii", case.name),
            seed: case.spec.seed,
            name: case.name,
            split: case.split,
            spec: case.spec,
        };
        write_volume(&image, &entry.image_path(out))?;
        write_volume(&label, &entry.label_path(out))?;
        cases.push(entry);
    }
    let manifest = DatasetManifest { seed: cfg.seed, cases };
    let text = toml::to_string(&manifest).map_err(|e| CliError::usage(format!("manifest: {e}")))?;
    let path = out.join(MANIFEST);
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    cfg.write_next_to(out)?;
    eprintln!("wrote {} cases to {}", manifest.cases.len(), out.display());
    Ok(())
}
