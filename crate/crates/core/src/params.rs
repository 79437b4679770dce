//! Named parameter tensors and their binding into a graph.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform init with variance `gain / fan_in`.
    pub fn push_init(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (3.0 * gain / fan_in as f64).sqrt();
        let t = Tensor::from_fn(shape.to_vec(), |_| T::of(rng.gen_range(-bound..bound)));
        self.push(name, t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every tensor as a graph leaf, in store order.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| g.leaf(t.clone(), requires_grad))
            .collect()
    }

    /// Gradients of previously bound leaves, in store order.
    pub fn grads(&self, g: &Graph<T>, bound: &[Var]) -> Result<Vec<Tensor<T>>> {
        bound
            .iter()
            .map(|&v| {
                g.grad(v)
                    .cloned()
                    .ok_or_else(|| Error::Contract("parameter was bound without requires_grad".into()))
            })
            .collect()
    }

    /// Overwrites tensors whose names appear in `other` with matching shapes.
    /// Returns how many were copied.
    pub fn copy_matching(&mut self, other: &ParamStore<T>) -> Result<usize> {
        let mut copied = 0;
        for (name, t) in other.iter() {
            if let Some(id) = self.find(name) {
                if self.tensors[id.0].shape() != t.shape() {
                    return Err(Error::dim(
                        "copy_matching",
                        format!("{name}: {:?} vs {:?}", self.tensors[id.0].shape(), t.shape()),
                    ));
                }
                self.tensors[id.0] = t.clone();
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// Keeps the listed tensors in their original order. The returned map
    /// sends old ids to new ones.
    pub fn retain(self, keep: &[ParamId]) -> (ParamStore<T>, Vec<Option<ParamId>>) {
        let mut map = vec![None; self.len()];
        let mut out = ParamStore::new();
        for (i, (name, t)) in self.names.into_iter().zip(self.tensors).enumerate() {
            if keep.contains(&ParamId(i)) {
                map[i] = Some(out.push(name, t));
            }
        }
        (out, map)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}
