//! Named parameter collections and initializers.

use std::collections::BTreeMap;

use super::graph::{Graph, Var};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::rng::Rng;

/// Ordered, name-addressable set of trainable tensors.
///
/// Iteration order is insertion order; checkpoints serialize in sorted-name
/// order so files are byte-stable regardless of construction order.
#[derive(Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        let id = self.index[name];
        &self.tensors[id]
    }

    pub fn index_of(&self, name: &str) -> usize {
        self.index[name]
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&id| &self.tensors[id])
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        let id = self.index[name];
        &mut self.tensors[id]
    }

    pub fn tensor(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    /// `(name, tensor)` pairs in sorted-name order.
    pub fn iter_sorted(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.index
            .iter()
            .map(move |(name, &id)| (name.as_str(), &self.tensors[id]))
    }

    /// Inject every parameter into a graph as a leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        let vars: Vec<Var> = self.tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let map = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), vars[i]))
            .collect();
        Bound { vars, map }
    }

    /// Cast every tensor (checkpoints store f32 payloads).
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.add(name.clone(), t.cast::<U>());
        }
        out
    }
}

/// Graph handles for one bound parameter set, addressable by name or index.
pub struct Bound {
    vars: Vec<Var>,
    map: BTreeMap<String, Var>,
}

impl Bound {
    /// Assemble a binding from already-created leaf vars (used by tests that
    /// drive layer builders directly).
    pub fn from_map(vars: Vec<Var>, map: BTreeMap<String, Var>) -> Self {
        Bound { vars, map }
    }

    /// Var for a parameter name. Panics on unknown names: that is a bug in
    /// the model wiring, not a runtime condition.
    pub fn var(&self, name: &str) -> Var {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    pub fn by_index(&self, id: usize) -> Var {
        self.vars[id]
    }

    pub fn ordered(&self) -> &[Var] {
        &self.vars
    }
}

/// Kaiming-style uniform init for conv / linear weights with `fan_in` inputs.
pub fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

/// Gaussian init used for embeddings and transformer weights.
pub fn normal_init<T: Scalar>(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<T> {
    Tensor::rand_normal(shape, 0.0, std, rng)
}
