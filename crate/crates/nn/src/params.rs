use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn next_store_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Globally unique parameter key: owning store plus index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub store: u64,
    pub id: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Saved in checkpoints but never differentiated (batchnorm running stats).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub kind: ParamKind,
}

/// Named parameter tensors of one network.
///
/// Every store carries a process-unique id so that gradients coming from a
/// tape that mixes several networks can be routed back to the right owner.
/// Cloning a store yields a new id.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    params: Vec<Param>,
    frozen: bool,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            uid: next_store_id(),
            params: self.params.clone(),
            frozen: self.frozen,
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            uid: next_store_id(),
            params: Vec::new(),
            frozen: false,
        }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name `{name}`"
        );
        self.params.push(Param { name, value, kind });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn key(&self, id: ParamId) -> ParamKey {
        ParamKey {
            store: self.uid,
            id,
        }
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Frozen stores contribute constants to a tape and never receive gradients.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Copies every value from `other`, which must have the same layout.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(NnError::Config(format!(
                "parameter count mismatch: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(NnError::Config(format!(
                    "layout mismatch at `{}` {:?} vs `{}` {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                )));
            }
            dst.value.data_mut().copy_from_slice(src.value.data());
        }
        Ok(())
    }

    /// True when every value is bitwise equal to `other`'s.
    pub fn bit_equal(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// `(name, tensor)` pairs with a name prefix, for checkpointing.
    pub fn named_tensors<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (String, &'a Tensor)> + 'a {
        self.params
            .iter()
            .map(move |p| (format!("{prefix}{}", p.name), &p.value))
    }

    /// Loads values for every parameter from `tensors`, looked up by prefixed name.
    pub fn load_named(&mut self, prefix: &str, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for p in &mut self.params {
            let name = format!("{prefix}{}", p.name);
            let t = tensors
                .get(&name)
                .ok_or_else(|| NnError::MissingParam(name.clone()))?;
            if t.shape() != p.value.shape() {
                return Err(NnError::Config(format!(
                    "checkpoint tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    pub(crate) params: BTreeMap<ParamKey, Tensor>,
    pub(crate) inputs: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, key: ParamKey) -> Option<&Tensor> {
        self.params.get(&key)
    }

    pub fn param(&self, store: &ParamStore, id: ParamId) -> Option<&Tensor> {
        self.params.get(&store.key(id))
    }

    /// Gradient with respect to a leaf created by `Tape::input`.
    pub fn input(&self, var: crate::tape::Var) -> Option<&Tensor> {
        self.inputs.get(&var.0)
    }

    pub fn contains_store(&self, store: &ParamStore) -> bool {
        self.params.keys().any(|k| k.store == store.uid())
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn keys(&self) -> impl Iterator<Item = &ParamKey> {
        self.params.keys()
    }
}
