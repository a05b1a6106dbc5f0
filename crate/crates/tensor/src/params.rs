use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to an entry of a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer; accumulates gradients.
    Learnable,
    /// State such as batch-norm running statistics. Never receives gradients.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub path: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
    grad: Option<Tensor<T>>,
}

impl<T: Scalar> ParamEntry<T> {
    pub fn grad(&self) -> Option<&Tensor<T>> {
        self.grad.as_ref()
    }
}

/// Flat registry of every learnable array and buffer of a model, keyed by a
/// stable hierarchical path such as `encoder.0.conv1.weight`.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, path: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> Result<ParamId> {
        let path = path.into();
        if self.index.contains_key(&path) {
            return Err(TensorError::DuplicateParameter(path));
        }
        let id = ParamId(self.entries.len());
        self.index.insert(path.clone(), id);
        self.entries.push(ParamEntry {
            path,
            kind,
            value,
            grad: None,
        });
        Ok(id)
    }

    pub fn id(&self, path: &str) -> Result<ParamId> {
        self.index
            .get(path)
            .copied()
            .ok_or_else(|| TensorError::UnknownParameter(path.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.entries[id.0].grad.as_ref()
    }

    pub fn path(&self, id: ParamId) -> &str {
        &self.entries[id.0].path
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Value and gradient of a learnable entry, for optimizers.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Tensor<T>, Option<&Tensor<T>>) {
        let e = &mut self.entries[id.0];
        (&mut e.value, e.grad.as_ref())
    }

    /// Mutable access to two distinct entries at once, e.g. the running mean
    /// and variance of a batch-norm layer.
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut Tensor<T>, &mut Tensor<T>) {
        assert_ne!(a, b, "pair_mut needs distinct entries");
        if a.0 < b.0 {
            let (lo, hi) = self.entries.split_at_mut(b.0);
            (&mut lo[a.0].value, &mut hi[0].value)
        } else {
            let (lo, hi) = self.entries.split_at_mut(a.0);
            (&mut hi[0].value, &mut lo[b.0].value)
        }
    }

    /// Adds `delta` into the gradient buffer of a learnable entry. Buffers
    /// silently ignore gradient contributions.
    pub fn accumulate_grad(&mut self, id: ParamId, delta: &[T]) {
        let e = &mut self.entries[id.0];
        if e.kind == ParamKind::Buffer {
            return;
        }
        assert_eq!(delta.len(), e.value.numel(), "gradient size for `{}`", e.path);
        match &mut e.grad {
            Some(g) => {
                for (a, &b) in g.data_mut().iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => {
                let g = Tensor::new(e.value.shape().to_vec(), delta.to_vec()).expect("shape checked");
                e.grad = Some(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Number of learnable scalars (buffers excluded).
    pub fn learnable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Learnable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Learnable scalars under a path prefix.
    pub fn learnable_count_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Learnable && e.path.starts_with(prefix))
            .map(|e| e.value.numel())
            .sum()
    }

    /// Copies every entry into a store of another element type.
    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    path: e.path.clone(),
                    kind: e.kind,
                    value: e.value.cast(),
                    grad: e.grad.as_ref().map(Tensor::cast),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}
