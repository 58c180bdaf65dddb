//! Named trainable arrays and their initialization.
//!
//! All model state lives in a [`ParamSet`]: an ordered map from name to
//! array. Policy parameters are distinguished from the rest purely by name
//! prefix (`rss_head.`, `rss_dep.`), which is how the trainer routes
//! supervised and policy gradients to disjoint subsets.

use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::rng::RngKey;
use crate::Real;
use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Initialization family for an array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Glorot-uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    Weight,
    /// Zeros.
    Bias,
    /// Word-vector style: `U(-0.05, 0.05)`.
    Embedding,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamArray {
    pub shape: Vec<usize>,
    pub values: Vec<Real>,
    pub kind: ParamKind,
    /// Per-value multiplier applied to gradients before the optimizer step;
    /// `None` means fully trainable. Used to freeze pre-trained embedding
    /// columns while leaving out-of-vocabulary columns trainable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_mask: Option<Vec<Real>>,
}

impl ParamArray {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn fans(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [rows, cols] => (*cols, *rows),
            [n] => (*n, 1),
            _ => (1, 1),
        }
    }
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamSet {
    entries: IndexMap<String, ParamArray>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], kind: ParamKind) {
        let numel: usize = shape.iter().product();
        self.entries.insert(
            name.to_string(),
            ParamArray {
                shape: shape.to_vec(),
                values: vec![0.0; numel],
                kind,
                update_mask: None,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&ParamArray> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamArray> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamArray)> {
        self.entries.iter().map(|(n, a)| (n.as_str(), a))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Bind the named array into a graph as a parameter leaf.
    pub fn bind(&self, g: &mut Graph, name: &str) -> Result<Tensor> {
        let a = self
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        g.bind_param(name, &a.shape, &a.values)
    }

    /// Total number of scalar values across arrays whose name passes `keep`.
    pub fn count_values(&self, keep: impl Fn(&str) -> bool) -> usize {
        self.iter()
            .filter(|(n, _)| keep(n))
            .map(|(_, a)| a.numel())
            .sum()
    }

    /// (Re)initialize every array from its kind: Glorot-uniform weights,
    /// zero biases, uniform(-0.05, 0.05) embeddings. Streams are keyed by
    /// array name, so the result does not depend on insertion order and the
    /// same seed reproduces identical values.
    pub fn initialize(&mut self, key: RngKey) {
        for (name, array) in self.entries.iter_mut() {
            let mut rng = key.with(hash_name(name)).stream();
            match array.kind {
                ParamKind::Bias => array.values.iter_mut().for_each(|v| *v = 0.0),
                ParamKind::Weight => {
                    let (fan_in, fan_out) = array.fans();
                    let bound = (6.0 / (fan_in + fan_out) as Real).sqrt();
                    array
                        .values
                        .iter_mut()
                        .for_each(|v| *v = rng.gen_range(-bound..bound));
                }
                ParamKind::Embedding => array
                    .values
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-0.05..0.05)),
            }
        }
    }
}

fn hash_name(name: &str) -> u64 {
    // FNV-1a; stable across runs and platforms
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Accumulated gradients keyed like a [`ParamSet`].
#[derive(Debug, Clone, Default)]
pub struct GradMap {
    entries: IndexMap<String, Vec<Real>>,
}

impl GradMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros_like(params: &ParamSet, keep: impl Fn(&str) -> bool) -> Self {
        let mut entries = IndexMap::new();
        for (name, array) in params.iter() {
            if keep(name) {
                entries.insert(name.to_string(), vec![0.0; array.numel()]);
            }
        }
        GradMap { entries }
    }

    pub fn get(&self, name: &str) -> Option<&[Real]> {
        self.entries.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Real])> {
        self.entries.iter().map(|(n, g)| (n.as_str(), g.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Flatten in entry order; used by the statistical tests.
    pub fn flat(&self) -> Vec<Real> {
        let mut out = Vec::new();
        for g in self.entries.values() {
            out.extend_from_slice(g);
        }
        out
    }

    /// `self += factor * (name, grad)`; missing names are created.
    pub fn accumulate(&mut self, name: &str, grad: &[Real], factor: Real) {
        let slot = self
            .entries
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; grad.len()]);
        debug_assert_eq!(slot.len(), grad.len());
        for (s, g) in slot.iter_mut().zip(grad) {
            *s += factor * g;
        }
    }

    /// `self += factor * other` across all entries of `other`.
    pub fn add_scaled(&mut self, other: &GradMap, factor: Real) {
        for (name, grad) in other.iter() {
            self.accumulate(name, grad, factor);
        }
    }

    pub fn scale(&mut self, factor: Real) {
        for g in self.entries.values_mut() {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", &[4, 6], ParamKind::Weight);
        p.insert("b", &[4], ParamKind::Bias);
        p.insert("embed", &[3, 5], ParamKind::Embedding);
        p
    }

    #[test]
    fn biases_are_zero_after_init() {
        let mut p = sample_set();
        p.initialize(RngKey::new(3));
        assert!(p.get("b").unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn glorot_bound_respected() {
        let mut p = sample_set();
        p.initialize(RngKey::new(3));
        // 4x6 matrix: fan_in + fan_out = 10
        let bound = (6.0 / 10.0 as Real).sqrt();
        assert!(p
            .get("w")
            .unwrap()
            .values
            .iter()
            .all(|v| v.abs() <= bound));
        // weights should not be all zero
        assert!(p.get("w").unwrap().values.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn embedding_bound_respected() {
        let mut p = sample_set();
        p.initialize(RngKey::new(9));
        assert!(p
            .get("embed")
            .unwrap()
            .values
            .iter()
            .all(|v| v.abs() <= 0.05));
    }

    #[test]
    fn same_seed_same_init() {
        let mut a = sample_set();
        let mut b = sample_set();
        a.initialize(RngKey::new(17));
        b.initialize(RngKey::new(17));
        assert_eq!(a.get("w").unwrap().values, b.get("w").unwrap().values);
    }

    #[test]
    fn gradmap_accumulates_scaled() {
        let mut g = GradMap::new();
        g.accumulate("w", &[1.0, 2.0], 1.0);
        g.accumulate("w", &[1.0, 2.0], 0.5);
        assert_eq!(g.get("w").unwrap(), &[1.5, 3.0]);
    }
}
