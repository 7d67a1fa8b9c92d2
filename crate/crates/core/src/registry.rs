use std::sync::Arc;

use crate::error::{config_err, Result};

/// Name-keyed table of interchangeable strategies.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, Arc<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, entry: Arc<T>) -> &mut Self {
        assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "duplicate {} registration: {name}",
            self.kind
        );
        self.entries.push((name, entry));
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, e)| e.clone())
            .ok_or_else(|| {
                config_err!(
                    "unknown {} '{name}' (known: {})",
                    self.kind,
                    self.names().join(", ")
                )
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| *n == name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}
