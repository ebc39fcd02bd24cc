use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

/// Named, ordered collection of parameter tensors.
///
/// Arithmetic between two sets requires identical names, order and per-entry
/// shapes; the result keeps that order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, _) in &entries {
            if !seen.insert(name.as_str()) {
                return Err(Error::shape(format!("duplicate parameter name `{name}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn into_entries(self) -> Vec<(String, Tensor)> {
        self.entries
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::shape(format!(
                "parameter sets have {} and {} entries",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(&other.entries) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(Error::shape(format!(
                    "parameter `{na}` {:?} does not match `{nb}` {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    /// `self + scale * other`, elementwise.
    pub fn axpy(&self, scale: f64, other: &ParamSet) -> Result<ParamSet> {
        self.check_compatible(other)?;
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|((n, a), (_, b))| {
                let mut out = a.clone();
                for (o, &g) in out.data_mut().iter_mut().zip(b.data()) {
                    *o += scale * g;
                }
                (n.clone(), out)
            })
            .collect();
        Ok(ParamSet { entries })
    }

    /// Adds `other` into `self` in place.
    pub fn add_assign(&mut self, other: &ParamSet) -> Result<()> {
        self.check_compatible(other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            for (o, &g) in a.data_mut().iter_mut().zip(b.data()) {
                *o += g;
            }
        }
        Ok(())
    }

    pub fn scale(&self, factor: f64) -> ParamSet {
        let entries = self
            .entries
            .iter()
            .map(|(n, t)| {
                let mut out = t.clone();
                out.data_mut().iter_mut().for_each(|v| *v *= factor);
                (n.clone(), out)
            })
            .collect();
        ParamSet { entries }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f64> {
        self.check_compatible(other)?;
        self.entries
            .iter()
            .zip(&other.entries)
            .try_fold(0.0f64, |m, ((_, a), (_, b))| Ok(m.max(a.max_abs_diff(b)?)))
    }

    pub fn bit_eq(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, a), (nb, b))| na == nb && a.bit_eq(b))
    }
}

/// One plain gradient-descent step: `params - lr * grads`.
pub fn sgd_step(params: &ParamSet, grads: &ParamSet, lr: f64) -> Result<ParamSet> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::config(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    params.check_compatible(grads)?;
    let entries = params
        .entries
        .iter()
        .zip(&grads.entries)
        .map(|((n, p), (_, g))| {
            let mut out = p.clone();
            for (o, &d) in out.data_mut().iter_mut().zip(g.data()) {
                *o -= lr * d;
            }
            (n.clone(), out)
        })
        .collect();
    Ok(ParamSet { entries })
}
