//! Mini-batch sources for training.

use cpseg_tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{extract_patch, normalize, Image, Mask};
use crate::error::{Error, Result};

/// Image and binary label patches, both (N, 1, S, S, S).
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub image: Tensor<f32>,
    pub label: Tensor<f32>,
}

impl Batch {
    pub fn new(image: Tensor<f32>, label: Tensor<f32>) -> Result<Self> {
        let s = image.shape();
        if s.len() != 5 || s[1] != 1 || s[2] != s[3] || s[3] != s[4] {
            return Err(Error::data(format!("batch images must be (N,1,S,S,S), got {s:?}")));
        }
        if label.shape() != s {
            return Err(Error::data(format!("label shape {:?} differs from image {s:?}", label.shape())));
        }
        if label.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::data("labels must be 0 or 1"));
        }
        if !image.all_finite() {
            return Err(Error::data("image patch holds non-finite values"));
        }
        Ok(Batch { image, label })
    }

    pub fn len(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_size(&self) -> usize {
        self.image.shape()[2]
    }
}

pub trait BatchSource {
    /// The batch for iteration `iter`; `rng` is a stream private to it.
    fn batch(&self, iter: u64, rng: &mut ChaCha8Rng) -> Result<Batch>;
}

/// The same batch at every iteration.
#[derive(Clone, Debug)]
pub struct FixedBatch(pub Batch);

impl BatchSource for FixedBatch {
    fn batch(&self, _iter: u64, _rng: &mut ChaCha8Rng) -> Result<Batch> {
        Ok(self.0.clone())
    }
}

struct Case {
    image: Image,
    label: Mask,
    /// Linear indices of foreground voxels.
    foreground: Vec<usize>,
}

/// Random patches from whole volumes; a share of them is centred on a
/// foreground voxel, the rest placed uniformly.
pub struct PatchSampler {
    cases: Vec<Case>,
    patch_size: usize,
    batch_size: usize,
    foreground_fraction: f64,
}

impl PatchSampler {
    /// Images are z-score normalized here.
    pub fn new(cases: Vec<(Image, Mask)>, patch_size: usize, batch_size: usize, foreground_fraction: f64) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::data("training set is empty"));
        }
        let mut out = Vec::with_capacity(cases.len());
        for (i, (image, label)) in cases.into_iter().enumerate() {
            image.check_same_grid(&label, &format!("case {i}"))?;
            let foreground = label.data.iter().enumerate().filter(|(_, &v)| v != 0).map(|(j, _)| j).collect();
            out.push(Case {
                image: normalize(&image),
                label,
                foreground,
            });
        }
        if out.iter().all(|c| c.foreground.is_empty()) {
            return Err(Error::data("no training case contains foreground voxels"));
        }
        Ok(PatchSampler {
            cases: out,
            patch_size,
            batch_size,
            foreground_fraction,
        })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    fn origin(&self, case: &Case, rng: &mut ChaCha8Rng) -> [usize; 3] {
        let shape = case.image.shape_zyx();
        let p = self.patch_size;
        let span = shape.map(|n| n.saturating_sub(p));
        if !case.foreground.is_empty() && rng.random_bool(self.foreground_fraction) {
            let idx = case.foreground[rng.random_range(0..case.foreground.len())];
            let [_, h, w] = shape;
            let centre = [idx / (h * w), (idx / w) % h, idx % w];
            [0, 1, 2].map(|a| centre[a].saturating_sub(p / 2).min(span[a]))
        } else {
            span.map(|s| rng.random_range(0..=s))
        }
    }
}

impl BatchSource for PatchSampler {
    fn batch(&self, _iter: u64, rng: &mut ChaCha8Rng) -> Result<Batch> {
        let p = self.patch_size;
        let n = self.batch_size;
        let mut image = Vec::with_capacity(n * p * p * p);
        let mut label = Vec::with_capacity(n * p * p * p);
        for _ in 0..n {
            let case = &self.cases[rng.random_range(0..self.cases.len())];
            let origin = self.origin(case, rng);
            let shape = case.image.shape_zyx();
            image.extend(extract_patch(&case.image.data, shape, origin, p));
            label.extend(extract_patch(&case.label.data, shape, origin, p).into_iter().map(f32::from));
        }
        let shape = vec![n, 1, p, p, p];
        Batch::new(Tensor::new(shape.clone(), image)?, Tensor::new(shape, label)?)
    }
}
