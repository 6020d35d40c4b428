//! Name-keyed registries of interchangeable implementations.
//!
//! Planners, ledger backends and fuzzing mutation strategies are each exposed
//! behind a trait object. A [`StrategyRegistry`] maps a stable name (as used in
//! config files and on the command line) to a builder that turns a JSON
//! parameter blob into a boxed implementation.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum StrategyError {
    #[error("unknown {family} strategy '{name}' (available: {available})")]
    Unknown {
        family: &'static str,
        name: String,
        available: String,
    },
    #[error("{family} strategy '{name}' is already registered")]
    Duplicate { family: &'static str, name: String },
    #[error("invalid parameters for {family} strategy '{name}': {message}")]
    InvalidParams {
        family: &'static str,
        name: String,
        message: String,
    },
}

type Builder<T> = Box<dyn Fn(&Value) -> Result<Box<T>, String> + Send + Sync>;

pub struct StrategyRegistry<T: ?Sized> {
    family: &'static str,
    builders: BTreeMap<String, Builder<T>>,
}

impl<T: ?Sized> StrategyRegistry<T> {
    pub fn new(family: &'static str) -> Self {
        Self {
            family,
            builders: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: &str, builder: F) -> Result<(), StrategyError>
    where
        F: Fn(&Value) -> Result<Box<T>, String> + Send + Sync + 'static,
    {
        if self.builders.contains_key(name) {
            return Err(StrategyError::Duplicate {
                family: self.family,
                name: name.to_string(),
            });
        }
        self.builders.insert(name.to_string(), Box::new(builder));
        Ok(())
    }

    pub fn build(&self, name: &str, params: &Value) -> Result<Box<T>, StrategyError> {
        let builder = self.builders.get(name).ok_or_else(|| StrategyError::Unknown {
            family: self.family,
            name: name.to_string(),
            available: self.names().join(", "),
        })?;
        builder(params).map_err(|message| StrategyError::InvalidParams {
            family: self.family,
            name: name.to_string(),
            message,
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    pub fn family(&self) -> &'static str {
        self.family
    }
}

impl<T: ?Sized> fmt::Debug for StrategyRegistry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StrategyRegistry")
            .field("family", &self.family)
            .field("names", &self.names())
            .finish()
    }
}
