//! Name-keyed registries of strategy trait objects.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{CoreError, Result};

/// Strategies of one family (`kind`), looked up by name at runtime.
pub struct Registry<S: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Arc<S>>,
}

impl<S: ?Sized> Registry<S> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Adds or replaces the strategy registered under `name`.
    pub fn register(&mut self, name: impl Into<String>, strategy: Arc<S>) -> &mut Self {
        self.entries.insert(name.into(), strategy);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<S>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| CoreError::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Registered names in sorted order.
    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
