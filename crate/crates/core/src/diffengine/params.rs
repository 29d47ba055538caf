use std::collections::BTreeMap;

use super::matrix::Matrix;
use super::tape::GradMap;
use crate::error::{Error, Result};

/// A trainable tensor with its gradient buffer and AdamW moments.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
    pub(crate) first_moment: Matrix,
    pub(crate) second_moment: Matrix,
}

impl Param {
    fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Matrix::zeros(r, c),
            first_moment: Matrix::zeros(r, c),
            second_moment: Matrix::zeros(r, c),
        }
    }
}

/// Named parameters plus optimizer state. Names are hierarchical
/// (`layer0.aa.phi_e.w0`) and iterate in sorted order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    pub(crate) step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name, Param::new(value));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name).map(|p| &p.value)
    }

    pub(crate) fn get_entry(&self, name: &str) -> Option<(&str, &Matrix)> {
        self.params
            .get_key_value(name)
            .map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name).map(|p| &p.grad)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Add a gradient map into the gradient buffers.
    pub fn accumulate(&mut self, grads: &GradMap) -> Result<()> {
        for (name, g) in grads {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if p.grad.shape() != g.shape() {
                return Err(Error::Dimension {
                    op: "accumulate",
                    left: p.grad.shape(),
                    right: g.shape(),
                });
            }
            p.grad.add_assign(g);
        }
        Ok(())
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in self.params.values_mut() {
            p.grad.scale_assign(factor);
        }
    }

    /// Replace parameter values by those of `other`, requiring identical names and shapes.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, p) in &mut self.params {
            let src = other
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if src.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.clone();
        }
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }
}
