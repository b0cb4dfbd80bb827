//! Named, shaped parameter collections.

use indexmap::IndexMap;

use super::{NumericsError, Tape, Tensor, Var};

/// Ordered map of named trainable tensors. Iteration order is insertion
/// order, which keeps optimizer state, gradient flattening and checkpoints
/// aligned without sorting.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        debug_assert!(!self.entries.contains_key(&name), "duplicate parameter {name}");
        self.entries.insert(name, tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NumericsError> {
        self.entries
            .get(name)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NumericsError> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Registers every parameter on a tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let mut vars = IndexMap::with_capacity(self.entries.len());
        for (name, tensor) in &self.entries {
            vars.insert(name.clone(), tape.param(tensor.clone()));
        }
        BoundParams { vars }
    }
}

/// Tape handles for a bound [`ParamSet`], in the same order.
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var, NumericsError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
