use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_STORE: AtomicU32 = AtomicU32::new(1);

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered collection of trainable tensors.
///
/// Each store carries a process-unique id so gradients recorded on a tape are
/// only ever routed back to the store whose parameters produced them. Clones
/// keep the id, so a cloned store can absorb gradients from tapes built on
/// either copy.
#[derive(Debug, Clone)]
pub struct ParamStore {
    id: u32,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self { id: NEXT_STORE.fetch_add(1, Ordering::Relaxed), names: Vec::new(), tensors: Vec::new() }
    }

    pub(crate) fn store_id(&self) -> u32 {
        self.id
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.id_of(name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        self.names.push(name.into());
        self.tensors.push(Tensor { requires_grad: true, grad: None, ..tensor });
        Ok(ParamId(self.tensors.len() - 1))
    }

    /// Adds a `dims`-shaped tensor drawn uniformly from `[-bound, bound]`.
    pub fn add_uniform<R: Rng + ?Sized>(&mut self, name: &str, dims: &[usize], bound: f32, rng: &mut R) -> Result<ParamId> {
        let mut t = Tensor::zeros(dims);
        if bound > 0.0 {
            let u = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::invalid(format!("{e}")))?;
            t.data.iter_mut().for_each(|v| *v = u.sample(rng));
        }
        self.add(name, t)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id_of(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Overwrites the values of an existing parameter; the shape must match.
    pub fn load(&mut self, name: &str, dims: &[usize], data: &[f32]) -> Result<()> {
        let id = self.id_of(name).ok_or_else(|| Error::Mismatch(format!("unknown parameter `{name}`")))?;
        let t = &mut self.tensors[id.0];
        if t.dims != dims || t.data.len() != data.len() {
            return Err(Error::Mismatch(format!("parameter `{name}`: expected {:?}, found {dims:?}", t.dims)));
        }
        t.data.copy_from_slice(data);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds the gradients of every trainable leaf of `tape` that was bound
    /// from this store. Leaves from other stores are ignored.
    pub fn accumulate_grads(&mut self, tape: &Tape) {
        for (key, grad) in tape.param_grads() {
            if key.store != self.id {
                continue;
            }
            let Some(g) = grad else { continue };
            let t = &mut self.tensors[key.index];
            match &mut t.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => t.grad = Some(g.to_vec()),
            }
        }
    }
}
