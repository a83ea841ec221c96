//! Named parameter storage with per-parameter freeze flags.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    frozen: Vec<bool>,
    lookup: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), frozen: Vec::new(), lookup: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter name {name}");
        let id = self.values.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.frozen.push(false);
        ParamId(id)
    }

    /// Adds a tensor initialised from N(0, std²).
    pub fn add_normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut impl Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std.max(0.0)).expect("valid std");
        let data = (0..n).map(|_| T::of(if std > 0.0 { dist.sample(rng) } else { 0.0 })).collect();
        self.add(name, Tensor::from_vec(shape, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        !self.frozen[id.0]
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    /// Freezes every parameter whose name starts with one of `prefixes`
    /// and unfreezes the rest.
    pub fn freeze_prefixes(&mut self, prefixes: &[&str]) {
        for (i, name) in self.names.iter().enumerate() {
            self.frozen[i] = prefixes.iter().any(|p| name.starts_with(p));
        }
    }

    /// Makes exactly the parameters under `prefixes` trainable.
    pub fn train_only_prefixes(&mut self, prefixes: &[&str]) {
        for (i, name) in self.names.iter().enumerate() {
            self.frozen[i] = !prefixes.iter().any(|p| name.starts_with(p));
        }
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.iter_mut().for_each(|f| *f = false);
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.ids().filter(|&i| self.is_trainable(i)).map(|i| self.name(i)).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Copies values from `src` into `dst` for every parameter whose name
    /// starts with `src_prefix`, renamed to `dst_prefix`.
    pub fn copy_prefix(&mut self, src_prefix: &str, dst_prefix: &str) -> usize {
        let mut copied = 0;
        for i in 0..self.names.len() {
            if let Some(rest) = self.names[i].strip_prefix(src_prefix) {
                let target = format!("{dst_prefix}{rest}");
                if let Some(&j) = self.lookup.get(&target) {
                    assert_eq!(self.values[i].shape(), self.values[j].shape(), "shape mismatch copying {target}");
                    self.values[j] = self.values[i].clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            frozen: self.frozen.clone(),
            lookup: self.lookup.clone(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }
}
