//! Flat parameter storage with per-layer segmentation.
//!
//! Every model parameter lives in one contiguous `f64` vector. A [`ParamLayout`]
//! records how that vector splits into dense layers, and inside each layer into
//! a row-major `out_dim x in_dim` weight block, a bias block and an optional
//! normalization block (gains followed by shifts).
//!
//! The weights outgoing from source neuron `j` of a layer form column `j` of
//! its weight block; these columns are the neuron segments used for
//! per-neuron masking.

use std::collections::BTreeSet;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of one dense layer as seen by the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub out_dim: usize,
    pub in_dim: usize,
    pub bias_len: usize,
    pub norm_len: usize,
}

impl LayerShape {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            bias_len: out_dim,
            norm_len: 0,
        }
    }

    /// A weight-only block, handy for quadratic test beds.
    pub fn weights_only(in_dim: usize, out_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            bias_len: 0,
            norm_len: 0,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_dim * self.in_dim
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.bias_len + self.norm_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub id: usize,
    pub shape: LayerShape,
    pub offset: usize,
}

impl LayerLayout {
    pub fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.shape.weight_len()
    }

    pub fn bias(&self) -> Range<usize> {
        let start = self.weights().end;
        start..start + self.shape.bias_len
    }

    pub fn norm(&self) -> Range<usize> {
        let start = self.bias().end;
        start..start + self.shape.norm_len
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.shape.len()
    }

    /// Flat index of `W[row][col]`.
    pub fn weight_index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.shape.out_dim && col < self.shape.in_dim);
        self.offset + row * self.shape.in_dim + col
    }

    /// Indices of the weights outgoing from source neuron `source`.
    pub fn neuron_segment(&self, source: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.shape.out_dim).map(move |row| self.weight_index(row, source))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamCategory {
    Weight,
    Bias,
    Norm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    layers: Vec<LayerLayout>,
    total_len: usize,
}

impl ParamLayout {
    pub fn new(shapes: &[LayerShape]) -> Self {
        let mut offset = 0;
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(id, &shape)| {
                let layer = LayerLayout { id, shape, offset };
                offset += shape.len();
                layer
            })
            .collect();
        Self {
            layers,
            total_len: offset,
        }
    }

    pub fn layers(&self) -> &[LayerLayout] {
        &self.layers
    }

    pub fn layer(&self, id: usize) -> Result<&LayerLayout> {
        self.layers.get(id).ok_or(Error::Index {
            index: id,
            len: self.layers.len(),
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn neuron_segments(&self, layer: usize) -> Result<Vec<Vec<usize>>> {
        let layer = self.layer(layer)?;
        Ok((0..layer.shape.in_dim)
            .map(|j| layer.neuron_segment(j).collect())
            .collect())
    }

    /// Layer id and category of a flat index.
    pub fn locate(&self, index: usize) -> Result<(usize, ParamCategory)> {
        if index >= self.total_len {
            return Err(Error::Index {
                index,
                len: self.total_len,
            });
        }
        let pos = self.layers.partition_point(|l| l.offset <= index) - 1;
        let layer = &self.layers[pos];
        let category = if layer.weights().contains(&index) {
            ParamCategory::Weight
        } else if layer.bias().contains(&index) {
            ParamCategory::Bias
        } else {
            ParamCategory::Norm
        };
        Ok((layer.id, category))
    }

    /// Boolean per flat index: true on weight entries.
    pub fn weight_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.total_len];
        for layer in &self.layers {
            flags[layer.weights()].iter_mut().for_each(|f| *f = true);
        }
        flags
    }

    /// All flat indices belonging to the given layers.
    pub fn layer_indices(&self, ids: &BTreeSet<usize>) -> Result<BTreeSet<usize>> {
        let mut out = BTreeSet::new();
        for &id in ids {
            out.extend(self.layer(id)?.range());
        }
        Ok(out)
    }
}

/// A parameter vector tied to its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self {
            values: vec![0.0; layout.total_len()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::Dimension {
                expected: layout.total_len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("parameter vector entry {i}")));
        }
        Ok(Self { values, layout })
    }

    /// Flat vector with a single weight-only layer of `len` entries.
    pub fn flat(values: Vec<f64>) -> Self {
        let layout = Arc::new(ParamLayout::new(&[LayerShape::weights_only(
            values.len(),
            1,
        )]));
        Self { values, layout }
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
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

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn layer_weights(&self, layer: usize) -> Result<&[f64]> {
        let range = self.layout.layer(layer)?.weights();
        Ok(&self.values[range])
    }

    /// Same layout and shape; returns a dimension error otherwise.
    pub fn check_compatible(&self, other: &ParamVector) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.len(),
                got: other.len(),
            })
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_values(self.layout.clone(), values)
    }

    fn zip_map(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_compatible(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            values,
            layout: self.layout.clone(),
        })
    }

    pub fn add(&self, other: &ParamVector) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &ParamVector) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            layout: self.layout.clone(),
        }
    }

    /// Copies the entries of layer `layer` from `source`.
    pub fn splice_layer(&mut self, source: &ParamVector, layer: usize) -> Result<()> {
        self.check_compatible(source)?;
        let range = self.layout.layer(layer)?.range();
        self.values[range.clone()].copy_from_slice(&source.values[range]);
        Ok(())
    }
}

/// Squared Euclidean distance `sum_i (w_i - u_i)^2`.
pub fn deviation_norm_sq(w: &ParamVector, u: &ParamVector) -> Result<f64> {
    w.check_compatible(u)?;
    Ok(w.values
        .iter()
        .zip(&u.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Entries of `w` whose index is *not* in `selector`, in index order.
pub fn restrict(w: &ParamVector, selector: &BTreeSet<usize>) -> Result<Vec<f64>> {
    if let Some(&last) = selector.iter().next_back() {
        if last >= w.len() {
            return Err(Error::Index {
                index: last,
                len: w.len(),
            });
        }
    }
    Ok(w.values
        .iter()
        .enumerate()
        .filter(|(i, _)| !selector.contains(i))
        .map(|(_, &v)| v)
        .collect())
}
