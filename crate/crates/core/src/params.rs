//! Named parameter storage shared by every network in the crate.
//!
//! Entries keep insertion order, which fixes the iteration order for
//! optimizers, checkpoints and parameter counting.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Index;

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{contract_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// Fixed buffers (e.g. sin-cos position tables) are stored but never updated.
    pub trainable: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(contract_err!("duplicate parameter name `{name}`"));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            tensor: tensor.with_grad(trainable),
            trainable,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Total number of stored scalars, fixed buffers included.
    pub fn total_elements(&self) -> u64 {
        self.entries.iter().map(|e| e.tensor.numel() as u64).sum()
    }

    pub fn trainable_elements(&self) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.numel() as u64)
            .sum()
    }

    /// Replaces the value of an existing tensor, keeping its shape contract.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| contract_err!("unknown parameter `{name}`"))?;
        let e = &mut self.entries[id.0];
        if e.tensor.shape() != tensor.shape() {
            return Err(contract_err!(
                "parameter `{name}`: shape {:?} vs stored {:?}",
                tensor.shape(),
                e.tensor.shape()
            ));
        }
        let trainable = e.trainable;
        e.tensor = tensor.with_grad(trainable);
        Ok(())
    }

    /// Registers every entry as a leaf of `g`; trainable entries require grad.
    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|e| g.leaf_with(&e.tensor, e.trainable))
                .collect(),
        }
    }

    /// Adds `scale * grad` of every bound trainable leaf into the stored grad buffers.
    pub fn absorb_grads<T: Scalar>(&mut self, grads: &Gradients<T>, bound: &Bound, scale: f32) -> Result<()> {
        for (e, &v) in self.entries.iter_mut().zip(&bound.vars) {
            if !e.trainable {
                continue;
            }
            if let Some(g) = grads.get(v) {
                let g: Vec<f32> = g.iter().map(|x| x.to_f32() * scale).collect();
                e.tensor.accumulate_grad(&g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    /// Names present here but absent from `other`, in insertion order.
    pub fn names_missing_from(&self, other: &ParamStore) -> Vec<String> {
        self.names()
            .filter(|n| other.id(n).is_none())
            .map(|n| n.to_string())
            .collect()
    }
}

/// Outcome of [`ParamStore::copy_shared`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransferReport {
    /// Tensors taken from the source, bit for bit.
    pub copied: Vec<String>,
    /// Tensors of this store the source does not have (left as initialized).
    pub initialized: Vec<String>,
    /// Source tensors this store has no slot for.
    pub unused: Vec<String>,
}

impl ParamStore {
    /// Copies every same-named tensor of `src` into this store. A shared
    /// name with a different shape is an error and leaves the store untouched.
    pub fn copy_shared(&mut self, src: &ParamStore) -> Result<TransferReport> {
        for e in &self.entries {
            if let Some(t) = src.by_name(&e.name) {
                if t.shape() != e.tensor.shape() {
                    return Err(contract_err!(
                        "parameter `{}`: source shape {:?} vs {:?}",
                        e.name,
                        t.shape(),
                        e.tensor.shape()
                    ));
                }
            }
        }
        let mut report = TransferReport::default();
        for e in &mut self.entries {
            match src.by_name(&e.name) {
                Some(t) => {
                    e.tensor = Tensor::new(t.shape(), t.data().to_vec())?.with_grad(e.trainable);
                    report.copied.push(e.name.clone());
                }
                None => report.initialized.push(e.name.clone()),
            }
        }
        report.unused = src.names_missing_from(self);
        Ok(report)
    }
}

/// Graph handles for every entry of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles created elsewhere, in store order (e.g. gradient-check inputs).
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}
