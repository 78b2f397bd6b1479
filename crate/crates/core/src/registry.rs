//! Name-keyed registries for interchangeable strategies.
//!
//! Strategy families (score branches, shot selectors, sweep axes, synthetic
//! world presets) are registered under a lowercase name and looked up at
//! runtime from configuration or command-line flags.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Box<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry { kind, entries: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &str, entry: Box<T>) -> &mut Self {
        self.entries.insert(name.to_lowercase(), entry);
        self
    }

    pub fn with(mut self, name: &str, entry: Box<T>) -> Self {
        self.register(name, entry);
        self
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries.get(&name.to_lowercase()).map(|b| b.as_ref()).ok_or_else(|| Error::UnknownName {
            kind: self.kind,
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(&name.to_lowercase())
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &T)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Named {
        fn id(&self) -> u32;
    }
    struct A;
    impl Named for A {
        fn id(&self) -> u32 {
            7
        }
    }

    #[test]
    fn lookup_is_case_insensitive() {
        let reg: Registry<dyn Named> = Registry::new("thing").with("Alpha", Box::new(A));
        assert_eq!(reg.get("ALPHA").unwrap().id(), 7);
        assert!(reg.contains("alpha"));
    }

    #[test]
    fn unknown_name_lists_available() {
        let reg: Registry<dyn Named> = Registry::new("thing").with("alpha", Box::new(A));
        let err = reg.get("beta").err().unwrap().to_string();
        assert!(err.contains("beta") && err.contains("alpha"), "{err}");
    }
}
