//! Named parameter registry shared by the model, optimizer and checkpoints.

use std::collections::HashMap;
use std::ops::Index;

use rand::Rng;
use stdn_tensor::{Scalar, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Handle to a registered parameter; valid for the store that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
    lookup: HashMap<String, usize>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), lookup: HashMap::new() }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::Param(format!("duplicate parameter name `{name}`")));
        }
        let id = self.names.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Registers every parameter on `tape` as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape<S>) -> Bound {
        Bound { vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect() }
    }

    /// Same as [`bind`](Self::bind) but nothing is tracked.
    pub fn bind_frozen(&self, tape: &mut Tape<S>) -> Bound {
        Bound { vars: self.tensors.iter().map(|t| tape.constant(t.clone())).collect() }
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore<S>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Param("parameter sets differ".into()));
        }
        for (i, (dst, src)) in self.tensors.iter_mut().zip(&other.tensors).enumerate() {
            if dst.shape() != src.shape() {
                return Err(Error::Param(format!(
                    "parameter `{}` has shape {:?}, source has {:?}",
                    self.names[i],
                    dst.shape(),
                    src.shape()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// Tape variables for every parameter of a store, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
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

/// Uniform draw in `[-bound, bound)`.
pub fn uniform<S: Scalar, R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::lit(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_lookup_and_duplicates() {
        let mut store = ParamStore::<f64>::new();
        let a = store.insert("a", Tensor::zeros([2, 2])).unwrap();
        let b = store.insert("b", Tensor::full([3], 1.0)).unwrap();
        assert_eq!(store.id("b"), Some(b));
        assert_eq!(store.name(a), "a");
        assert_eq!(store.numel(), 7);
        assert!(store.get(a).requires_grad());
        assert!(store.insert("a", Tensor::zeros([1])).is_err());
    }

    #[test]
    fn copy_checks_layout() {
        let mut x = ParamStore::<f32>::new();
        x.insert("w", Tensor::zeros([2])).unwrap();
        let mut y = ParamStore::<f32>::new();
        y.insert("w", Tensor::full([2], 3.0)).unwrap();
        x.copy_from(&y).unwrap();
        assert_eq!(x.get(ParamId(0)).data(), &[3.0, 3.0]);
        let mut z = ParamStore::<f32>::new();
        z.insert("w", Tensor::zeros([3])).unwrap();
        assert!(x.copy_from(&z).is_err());
    }
}
