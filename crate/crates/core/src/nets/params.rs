use std::collections::HashMap;

use advlab_tensor::{Graph, Real, Tensor, Var};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

/// Ordered collection of named parameter tensors (θ).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Inserts a parameter; replaces the value if the name already exists.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.tensors[i] = value,
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.tensors.push(value);
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| CoreError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.tensors[i]),
            None => Err(CoreError::MissingParam(name.to_string())),
        }
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Number of scalars whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.len()).sum()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            let mut buf = Vec::with_capacity(t.len() * 8);
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        hex(&h.finalize())
    }

    /// Adds every parameter to `g` as a leaf.
    pub fn bind<'a>(&'a self, g: &mut Graph<T>, trainable: bool) -> Bound<'a, T> {
        let vars = self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect();
        Bound { store: self, vars }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    pub fn map_tensors(&mut self, mut f: impl FnMut(&str, &mut Tensor<T>)) {
        for (n, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            f(n, t);
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parameters bound to graph leaves for one forward pass.
pub struct Bound<'a, T> {
    store: &'a ParamStore<T>,
    vars: Vec<Var>,
}

impl<T: Real> Bound<'_, T> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.store
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| CoreError::MissingParam(name.to_string()))
    }

    /// Leaves in store order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Parameter initialization helpers.
pub struct Init<'a, T, R: ?Sized> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<T: Real, R: Rng + ?Sized> Init<'_, T, R> {
    /// Fan-in scaled uniform weights `U(−1/√fan_in, 1/√fan_in)` and zero bias.
    pub fn conv(&mut self, name: &str, c_out: usize, c_in_per_group: usize, k: usize) {
        let fan_in = (c_in_per_group * k * k) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let shape = [c_out, c_in_per_group, k, k];
        let w = Tensor::from_fn(&shape, |_| T::lit(self.rng.gen_range(-bound..bound)));
        self.store.insert(format!("{name}.w"), w);
        self.store.insert(format!("{name}.b"), Tensor::zeros(&[c_out]));
    }

    pub fn norm(&mut self, name: &str, c: usize) {
        self.store.insert(format!("{name}.gamma"), Tensor::ones(&[c]));
        self.store.insert(format!("{name}.beta"), Tensor::zeros(&[c]));
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) {
        self.store.insert(name, Tensor::full(shape, T::lit(value)));
    }
}
