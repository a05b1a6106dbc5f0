//! Phantom datasets: per-case specs with disjoint seeds and jittered geometry.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::phantom::{gen_phantom, PhantomSpec};
use super::volume::{Image, Mask};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomDatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Seeds every case spec; the per-case phantom seeds are drawn from it.
    pub seed: u64,
    /// Uniform jitter of the mean radius, ± mm.
    pub radius_jitter_mm: f64,
    /// Uniform jitter of the folding amplitude, ± mm.
    pub amplitude_jitter_mm: f64,
    pub phantom: PhantomSpec,
}

impl Default for PhantomDatasetConfig {
    fn default() -> Self {
        PhantomDatasetConfig {
            n_train: 20,
            n_test: 5,
            seed: 0,
            radius_jitter_mm: 2.0,
            amplitude_jitter_mm: 0.5,
            phantom: PhantomSpec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub name: String,
    pub split: Split,
    pub spec: PhantomSpec,
}

impl CaseSpec {
    pub fn generate(&self) -> Result<(Image, Mask)> {
        gen_phantom(&self.spec)
    }
}

impl PhantomDatasetConfig {
    /// Specs for all cases, training cases first. Each is validated.
    pub fn cases(&self) -> Result<Vec<CaseSpec>> {
        if self.n_train == 0 {
            return Err(Error::config("the dataset needs at least one training case"));
        }
        if !(self.radius_jitter_mm >= 0.0 && self.amplitude_jitter_mm >= 0.0) {
            return Err(Error::config("jitter widths must be non-negative"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(self.n_train + self.n_test);
        let splits = std::iter::repeat_n(Split::Train, self.n_train).chain(std::iter::repeat_n(Split::Test, self.n_test));
        for (i, split) in splits.enumerate() {
            let seed = loop {
                // 63 bits so the seed survives a TOML round trip
                let s = rng.random::<u64>() >> 1;
                if seen.insert(s) {
                    break s;
                }
            };
            let mut spec = self.phantom.clone();
            spec.seed = seed;
            spec.radius_mm += jitter(&mut rng, self.radius_jitter_mm);
            spec.fold_amplitude_mm = (spec.fold_amplitude_mm + jitter(&mut rng, self.amplitude_jitter_mm)).max(0.0);
            spec.validate()?;
            let name = match split {
                Split::Train => format!("train_{i:03}"),
                Split::Test => format!("test_{:03}", i - self.n_train),
            };
            out.push(CaseSpec { name, split, spec });
        }
        Ok(out)
    }
}

fn jitter(rng: &mut ChaCha8Rng, width: f64) -> f64 {
    if width > 0.0 {
        rng.random_range(-width..=width)
    } else {
        0.0
    }
}
