//! Named parameter collections and their gradient mirrors.

use std::collections::HashMap;

use crate::{Error, Result};

/// Shape of a parameter entry, rank at most 2. Matrices are row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rank(&self) -> u8 {
        match self {
            Shape::Vector(_) => 1,
            Shape::Matrix(_, _) => 2,
        }
    }

    pub fn dims(&self) -> Vec<u32> {
        match *self {
            Shape::Vector(n) => vec![n as u32],
            Shape::Matrix(r, c) => vec![r as u32, c as u32],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<f64>,
}

/// Ordered map from name to dense f64 array. Iteration order is insertion
/// order, which the checkpoint format relies on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: Shape, data: Vec<f64>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        if shape.len() != data.len() {
            return Err(Error::ShapeMismatch {
                op: "param insert",
                detail: format!("`{name}` declared {} values, got {}", shape.len(), data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter `{name}`")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry { name: name.to_string(), shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn entry_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn entry(&self, idx: usize) -> &ParamEntry {
        &self.entries[idx]
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut ParamEntry {
        &mut self.entries[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar parameter count.
    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Check the all-finite invariant; call after any in-place update.
    pub fn validate_finite(&self) -> Result<()> {
        for e in &self.entries {
            if !e.data.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter `{}` after update", e.name)));
            }
        }
        Ok(())
    }
}

/// Gradients with the same key set and shapes as the [`ParamStore`] they
/// were produced from.
#[derive(Clone, Debug, PartialEq)]
pub struct GradStore {
    names: Vec<String>,
    shapes: Vec<Shape>,
    grads: Vec<Vec<f64>>,
}

impl GradStore {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradStore {
            names: store.iter().map(|e| e.name.clone()).collect(),
            shapes: store.iter().map(|e| e.shape).collect(),
            grads: store.iter().map(|e| vec![0.0; e.data.len()]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn grad(&self, idx: usize) -> &[f64] {
        &self.grads[idx]
    }

    pub fn grad_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.grads[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.grads[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names.iter().map(|n| n.as_str()).zip(self.grads.iter().map(|g| g.as_slice()))
    }

    /// self += alpha * other (entry-wise; key sets must match).
    pub fn axpy(&mut self, alpha: f64, other: &GradStore) {
        assert_eq!(self.names, other.names, "gradstore key sets differ");
        for (g, o) in self.grads.iter_mut().zip(&other.grads) {
            for (gi, oi) in g.iter_mut().zip(o) {
                *gi += alpha * oi;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            for gi in g.iter_mut() {
                *gi *= s;
            }
        }
    }

    /// Global L2 norm over all entries.
    pub fn l2_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn matches(&self, store: &ParamStore) -> bool {
        self.names.len() == store.len()
            && store
                .iter()
                .zip(self.names.iter().zip(&self.shapes))
                .all(|(e, (n, s))| e.name == *n && e.shape == *s)
    }
}
