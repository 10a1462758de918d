use std::collections::BTreeMap;

use crate::error::{Result, WeightsError};
use crate::tensor::Tensor;

/// Read-only view of a named-tensor store under a dotted name prefix.
#[derive(Clone, Debug)]
pub struct ParamScope<'a> {
    map: &'a BTreeMap<String, Tensor>,
    prefix: String,
}

impl<'a> ParamScope<'a> {
    pub fn new(map: &'a BTreeMap<String, Tensor>, prefix: impl Into<String>) -> Self {
        ParamScope {
            map,
            prefix: prefix.into(),
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn child(&self, name: impl std::fmt::Display) -> ParamScope<'a> {
        ParamScope {
            map: self.map,
            prefix: join(&self.prefix, &name.to_string()),
        }
    }

    pub fn get(&self, name: &str) -> Result<&'a Tensor> {
        let full = join(&self.prefix, name);
        self.map
            .get(&full)
            .ok_or_else(|| WeightsError::MissingParameter(full).into())
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
