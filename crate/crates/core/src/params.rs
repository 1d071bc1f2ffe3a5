//! Named parameter storage shared by all networks.
//!
//! Values are reference counted so a graph can hold the exact parameter
//! version it was built with while an optimizer writes new values
//! (copy-on-write through [`Arc::make_mut`]).

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Arc<Tensor>,
    trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Registers a trainable parameter. Names must be unique.
    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        self.push(name, value, true)
    }

    /// Registers a non-trainable buffer (running statistics).
    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.push(name, value, false)
    }

    fn push(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(self.find(name).is_none(), "duplicate parameter name {name}");
        self.entries.push(Entry { name: name.to_string(), value: Arc::new(value), trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.entries[id.0].value)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::Shape(alloc::format!(
                "parameter {}: expected {:?}, got {:?}",
                e.name,
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = Arc::new(value);
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Trainable parameters whose name starts with `prefix`.
    pub fn trainable_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| self.is_trainable(id) && self.name(id).starts_with(prefix))
            .collect()
    }

    pub fn with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.ids().filter(|&id| self.name(id).starts_with(prefix)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &*e.value))
    }

    /// Overwrites every entry from a name → tensor lookup; all names must resolve.
    pub fn load_from<'a>(&mut self, mut lookup: impl FnMut(&str) -> Option<&'a Tensor>) -> Result<()> {
        for i in 0..self.entries.len() {
            let name = self.entries[i].name.clone();
            let t = lookup(&name).ok_or(Error::UnknownParam(name))?;
            self.set(ParamId(i), t.clone())?;
        }
        Ok(())
    }

    pub fn num_scalars(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable && e.name.starts_with(prefix))
            .map(|e| e.value.len())
            .sum()
    }
}

/// Initialization schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitKind {
    Normal(f64),
    Const(f64),
}

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a, R: Rng + ?Sized> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
    prefix: String,
}

impl<'a, R: Rng + ?Sized> Builder<'a, R> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut R, prefix: &str) -> Self {
        Self { store, rng, prefix: prefix.to_string() }
    }

    pub fn sub(&mut self, name: &str) -> Builder<'_, R> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            alloc::format!("{}.{}", self.prefix, name)
        };
        Builder { store: self.store, rng: self.rng, prefix }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            alloc::format!("{}.{}", self.prefix, name)
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: InitKind) -> ParamId {
        let t = match init {
            InitKind::Normal(std) => Tensor::randn(shape, std, self.rng),
            InitKind::Const(v) => Tensor::full(shape, v),
        };
        let full = self.full_name(name);
        self.store.add(&full, t)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        let full = self.full_name(name);
        self.store.add_buffer(&full, value)
    }
}
