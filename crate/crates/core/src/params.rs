//! Flattened parameter vectors with a stable name map.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Every trainable parameter of a model laid out contiguously, with named slots.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector {
    values: Vec<f64>,
    slots: Vec<ParamSlot>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, values: &[f64]) {
        self.slots.push(ParamSlot {
            name: name.into(),
            offset: self.values.len(),
            len: values.len(),
        });
        self.values.extend_from_slice(values);
    }

    /// Appends all slots of `other` with `prefix.` prepended to their names.
    pub fn append(&mut self, prefix: &str, other: ParamVector) {
        let base = self.values.len();
        self.values.extend(other.values);
        self.slots.extend(other.slots.into_iter().map(|s| ParamSlot {
            name: format!("{prefix}.{}", s.name),
            offset: base + s.offset,
            len: s.len,
        }));
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn slot(&self, name: &str) -> Option<&[f64]> {
        self.slots
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    /// Human-readable name of a flat index, e.g. `head.layer0.weights[3]`.
    pub fn name_of(&self, index: usize) -> String {
        self.slots
            .iter()
            .find(|s| index >= s.offset && index < s.offset + s.len)
            .map(|s| format!("{}[{}]", s.name, index - s.offset))
            .unwrap_or_else(|| format!("#{index}"))
    }
}

/// Splits `values` into consecutive chunks of the given lengths.
pub(crate) fn split_params<'a>(values: &'a [f64], lens: &[usize]) -> Result<Vec<&'a [f64]>> {
    let total: usize = lens.iter().sum();
    if total != values.len() {
        return Err(Error::Shape(format!(
            "expected {total} parameters, got {}",
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(lens.len());
    let mut rest = values;
    for &n in lens {
        let (head, tail) = rest.split_at(n);
        out.push(head);
        rest = tail;
    }
    Ok(out)
}
