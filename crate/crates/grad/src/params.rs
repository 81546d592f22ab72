use std::collections::BTreeMap;

use crate::error::GradError;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Named parameter tensors in deterministic (lexicographic) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    map: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, GradError> {
        self.map
            .get(name)
            .ok_or_else(|| GradError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, GradError> {
        self.map
            .get_mut(name)
            .ok_or_else(|| GradError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Merge another set under `prefix.`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet) {
        for (k, v) in other.iter() {
            self.insert(format!("{prefix}.{k}"), v.clone());
        }
    }

    /// The subset stored under `prefix.`, with the prefix stripped.
    pub fn sub_set(&self, prefix: &str) -> ParamSet {
        let p = format!("{prefix}.");
        ParamSet {
            map: self
                .map
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.map.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }

    /// Register every parameter as a differentiable tape input.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), tape.input(v.clone())))
                .collect(),
        }
    }

    /// Name already-recorded vars, taken in the set's iteration order.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundParams, GradError> {
        if vars.len() != self.map.len() {
            return Err(GradError::invalid(
                "bind_vars",
                format!("{} vars for {} parameters", vars.len(), self.map.len()),
            ));
        }
        Ok(BoundParams {
            vars: self.map.keys().cloned().zip(vars.iter().copied()).collect(),
        })
    }

    /// Parameter values in iteration order.
    pub fn values(&self) -> Vec<Tensor> {
        self.map.values().cloned().collect()
    }

    /// Register every parameter as a constant (frozen) tape input.
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
                .collect(),
        }
    }
}

/// Parameters registered on a tape.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var, GradError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| GradError::MissingParam(name.to_string()))
    }

    /// Gradients for every bound parameter (zero where unreached).
    pub fn collect(&self, tape: &Tape, grads: &Gradients) -> ParamSet {
        let mut out = ParamSet::new();
        for (k, &v) in &self.vars {
            out.insert(k.clone(), grads.wrt(tape, v));
        }
        out
    }
}
