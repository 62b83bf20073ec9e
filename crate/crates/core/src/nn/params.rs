use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Name and shape of one block inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        LayoutEntry {
            name: name.into(),
            shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat parameter storage with a layout describing how it splits into
/// weight and bias blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayoutEntry>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<LayoutEntry>) -> Result<Self> {
        let expected: usize = layout.iter().map(LayoutEntry::numel).sum();
        if values.len() != expected {
            return Err(Error::dim("ParamVector::new", expected, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(alloc::format!(
                "parameter {i} is {}",
                values[i]
            )));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: Vec<LayoutEntry>) -> Self {
        let n = layout.iter().map(LayoutEntry::numel).sum();
        ParamVector {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[LayoutEntry] {
        &self.layout
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }

    /// Iterates `(entry, block)` pairs in layout order.
    pub fn blocks(&self) -> impl Iterator<Item = (&LayoutEntry, &[f64])> {
        let mut offset = 0;
        self.layout.iter().map(move |e| {
            let n = e.numel();
            let block = &self.values[offset..offset + n];
            offset += n;
            (e, block)
        })
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.blocks().find(|(e, _)| e.name == name).map(|(_, b)| b)
    }

    pub fn into_blocks(self) -> Vec<(LayoutEntry, Vec<f64>)> {
        let mut out = Vec::with_capacity(self.layout.len());
        let mut offset = 0;
        for e in self.layout {
            let n = e.numel();
            out.push((e, self.values[offset..offset + n].to_vec()));
            offset += n;
        }
        out
    }

    pub fn from_blocks(blocks: Vec<(LayoutEntry, Vec<f64>)>) -> Result<Self> {
        let mut values = Vec::new();
        let mut layout = Vec::with_capacity(blocks.len());
        for (e, b) in blocks {
            if b.len() != e.numel() {
                return Err(Error::dim("ParamVector::from_blocks", e.numel(), b.len()));
            }
            values.extend_from_slice(&b);
            layout.push(e);
        }
        ParamVector::new(values, layout)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
