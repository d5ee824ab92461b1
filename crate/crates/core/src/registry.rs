//! Name-keyed registry of strategy constructors.
//!
//! Protocols, learners and environments are each looked up by name at
//! runtime (from CLI flags or config files) and built behind a trait object.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};

type Constructor<T, P> = Box<dyn Fn(&P) -> Result<Box<T>> + Send + Sync>;

pub struct Registry<T: ?Sized, P> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Constructor<T, P>>,
}

impl<T: ?Sized, P> Registry<T, P> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `ctor` under `name`, replacing any earlier entry.
    pub fn register<F>(&mut self, name: &'static str, ctor: F) -> &mut Self
    where
        F: Fn(&P) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.entries.insert(name, Box::new(ctor));
        self
    }

    pub fn build(&self, name: &str, params: &P) -> Result<Box<T>> {
        match self.entries.get(name) {
            Some(ctor) => ctor(params),
            None => Err(CoreError::UnknownName {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            }),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }

    struct Hello(u32);

    impl Greeter for Hello {
        fn greet(&self) -> String {
            format!("hello x{}", self.0)
        }
    }

    #[test]
    fn builds_registered_and_rejects_unknown() {
        let mut reg: Registry<dyn Greeter, u32> = Registry::new("greeter");
        reg.register("hello", |n| Ok(Box::new(Hello(*n))));
        assert_eq!(reg.build("hello", &3).unwrap().greet(), "hello x3");
        assert!(reg.contains("hello"));
        match reg.build("bye", &1) {
            Err(CoreError::UnknownName { kind, known, .. }) => {
                assert_eq!(kind, "greeter");
                assert_eq!(known, "hello");
            }
            _ => panic!("expected unknown-name error"),
        }
    }
}
