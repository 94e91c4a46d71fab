use std::collections::HashMap;

use super::{Element, Tensor};
use crate::error::{dim_err, Error, Result};

/// Stable handle to a named parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Element = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Replace the value of `name`, keeping its registered shape.
    pub fn assign(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Validation(format!("unknown parameter `{name}`")))?;
        if self.tensors[id.0].shape() != value.shape() {
            return Err(dim_err!(
                "parameter `{name}` has shape {:?}, got {:?}",
                self.tensors[id.0].shape(),
                value.shape()
            ));
        }
        self.tensors[id.0] = value.with_requires_grad(true);
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// Gradients aligned with a [`ParamStore`]; parameters the loss never
/// touched have no entry.
#[derive(Clone, Debug)]
pub struct Grads<T: Element = f32> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Grads<T> {
    pub fn empty(n_params: usize) -> Self {
        Grads {
            grads: vec![None; n_params],
        }
    }

    pub(crate) fn from_vec(grads: Vec<Option<Vec<T>>>) -> Self {
        Grads { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// `self += scale * other`, elementwise.
    pub fn accumulate(&mut self, other: &Grads<T>, scale: T) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            let Some(theirs) = theirs else { continue };
            match mine {
                Some(m) => m.iter_mut().zip(theirs).for_each(|(a, &b)| *a = *a + scale * b),
                None => *mine = Some(theirs.iter().map(|&b| scale * b).collect()),
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().flatten().all(|v| v.is_finite())
    }

    pub fn global_norm(&self) -> T {
        self.grads
            .iter()
            .flatten()
            .flatten()
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }
}
