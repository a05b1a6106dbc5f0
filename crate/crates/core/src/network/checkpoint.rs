//! Single-file checkpoints: a TOML manifest followed by every stored array
//! as (path, kind, shape, little-endian f32 data).

use std::fs;
use std::path::Path;

use cpseg_tensor::{ParamKind, ParameterStore, Tensor};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::Network;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CPSGCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    /// Optimizer steps taken when the checkpoint was written.
    pub iteration: u64,
    pub model: ModelConfig,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub store: ParameterStore<f32>,
}

impl Checkpoint {
    pub fn new(model: &ModelConfig, seed: u64, iteration: u64, store: ParameterStore<f32>) -> Self {
        Checkpoint {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                seed,
                iteration,
                model: model.clone(),
            },
            store,
        }
    }

    /// Rebuilds the network described by the manifest and checks that the
    /// stored arrays match its layout exactly.
    pub fn into_network(self) -> Result<(Network, ParameterStore<f32>)> {
        let mut layout = ParameterStore::<f32>::new();
        let net = Network::build(&self.manifest.model, &mut layout, self.manifest.seed)?;
        if layout.len() != self.store.len() {
            return Err(Error::config(format!(
                "checkpoint holds {} arrays, the configured model has {}",
                self.store.len(),
                layout.len()
            )));
        }
        for ((_, want), (_, got)) in layout.entries().zip(self.store.entries()) {
            if want.path != got.path || want.kind != got.kind || want.value.shape() != got.value.shape() {
                return Err(Error::config(format!(
                    "checkpoint array `{}` {:?} does not match model array `{}` {:?}",
                    got.path,
                    got.value.shape(),
                    want.path,
                    want.value.shape()
                )));
            }
        }
        Ok((net, self.store))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = toml::to_string(&self.manifest).map_err(|e| Error::config(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        out.extend_from_slice(&(self.store.len() as u64).to_le_bytes());
        for (_, e) in self.store.entries() {
            out.extend_from_slice(&(e.path.len() as u32).to_le_bytes());
            out.extend_from_slice(e.path.as_bytes());
            out.push(match e.kind {
                ParamKind::Learnable => 0,
                ParamKind::Buffer => 1,
            });
            out.push(e.value.shape().len() as u8);
            for &d in e.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |detail: String| Error::Checkpoint {
            path: path.to_path_buf(),
            detail,
        };
        let mut r = Reader { bytes, pos: 0 };
        let mut take = |n: usize, what: &str| r.take(n).ok_or_else(|| err(format!("truncated while reading {what}")));
        if take(8, "magic")? != MAGIC {
            return Err(err("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(4, "version")?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(err(format!("unsupported format version {version}")));
        }
        let mlen = u64::from_le_bytes(take(8, "manifest length")?.try_into().unwrap()) as usize;
        let text = std::str::from_utf8(take(mlen, "manifest")?).map_err(|e| err(format!("manifest is not UTF-8: {e}")))?;
        let manifest: Manifest = toml::from_str(text).map_err(|e| err(format!("manifest: {e}")))?;
        let count = u64::from_le_bytes(take(8, "entry count")?.try_into().unwrap());
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let plen = u32::from_le_bytes(take(4, "path length")?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(plen, "path")?.to_vec()).map_err(|e| err(format!("path: {e}")))?;
            let kind = match take(1, "kind")?[0] {
                0 => ParamKind::Learnable,
                1 => ParamKind::Buffer,
                k => return Err(err(format!("`{name}`: unknown kind {k}"))),
            };
            let rank = take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(take(8, "shape")?.try_into().unwrap()) as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| err(format!("`{name}`: shape overflows")))?;
            let raw = take(numel.checked_mul(4).ok_or_else(|| err("size overflow".into()))?, &name)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let value = Tensor::new(shape, data).map_err(|e| err(format!("`{name}`: {e}")))?;
            store.register(name, kind, value).map_err(|e| err(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { manifest, store })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    // write-then-rename so an interrupted save never clobbers the last good file
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}
