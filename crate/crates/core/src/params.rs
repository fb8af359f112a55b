use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MsanError, Result};
use crate::tensor::Tensor;

/// Named tensors in a fixed (lexicographic) order.
///
/// Used for model parameters, their gradients, and optimizer moments alike.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| MsanError::Usage(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Global L2 norm over every entry of every tensor.
    pub fn global_norm(&self) -> f64 {
        self.tensors.values().map(Tensor::squared_norm).sum::<f64>().sqrt()
    }

    pub fn scale_all(&mut self, k: f64) {
        for t in self.tensors.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }

    /// `self += k * other`, requiring identical names and shapes.
    pub fn add_scaled(&mut self, other: &ParamStore, k: f64) -> Result<()> {
        for (name, t) in self.tensors.iter_mut() {
            let o = other.get(name)?;
            if o.shape() != t.shape() {
                return Err(MsanError::dim("add_scaled", format!("{:?}", t.shape()), format!("{:?}", o.shape())));
            }
            for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
                *a += k * b;
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ParamStore) -> f64 {
        self.tensors
            .iter()
            .map(|(name, t)| match other.tensors.get(name) {
                Some(o) if o.shape() == t.shape() => t
                    .data()
                    .iter()
                    .zip(o.data())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}
