//! Flat parameter storage.
//!
//! All model tensors live in one contiguous `Vec<f64>` addressed by
//! [`TensorId`] handles carrying `(offset, rows, cols)` metadata. This
//! keeps the optimizer a pair of flat-vector loops, makes gradients a
//! same-layout buffer, and lets finite-difference checks perturb any
//! named tensor generically.

use crate::geom::rng::Rng;
use crate::{Error, Result};
use ndarray::{ArrayView2, ArrayViewMut2};
use std::collections::HashMap;

/// Handle to one named tensor inside a [`Params`] store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
pub struct TensorMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorMeta {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone)]
pub struct Params {
    metas: Vec<TensorMeta>,
    index: HashMap<String, usize>,
    pub data: Vec<f64>,
}

impl Params {
    pub fn new() -> Self {
        Params {
            metas: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    /// Registers a zero-initialized tensor.
    ///
    /// # Panics
    /// On duplicate names (a model assembly bug, not a runtime input).
    pub fn alloc(&mut self, name: &str, rows: usize, cols: usize) -> TensorId {
        assert!(
            !self.index.contains_key(name),
            "duplicate tensor name {name}"
        );
        let offset = self.data.len();
        self.data.resize(offset + rows * cols, 0.0);
        let id = TensorId(self.metas.len());
        self.index.insert(name.to_string(), id.0);
        self.metas.push(TensorMeta {
            name: name.to_string(),
            rows,
            cols,
            offset,
        });
        id
    }

    /// Weight matrix initialized uniformly in `±1/√fan_in` (fan-in =
    /// rows, for row-vector × matrix application).
    pub fn alloc_weight(&mut self, name: &str, rows: usize, cols: usize, rng: &mut Rng) -> TensorId {
        let id = self.alloc(name, rows, cols);
        let scale = 1.0 / (rows as f64).sqrt();
        let meta = &self.metas[id.0];
        let (start, end) = (meta.offset, meta.offset + meta.len());
        for v in &mut self.data[start..end] {
            *v = rng.uniform(-scale, scale);
        }
        id
    }

    /// Zero-initialized bias row `(1, cols)`.
    pub fn alloc_bias(&mut self, name: &str, cols: usize) -> TensorId {
        self.alloc(name, 1, cols)
    }

    /// One-initialized gain row `(1, cols)` for normalization layers.
    pub fn alloc_gain(&mut self, name: &str, cols: usize) -> TensorId {
        let id = self.alloc(name, 1, cols);
        let meta = &self.metas[id.0];
        let (start, end) = (meta.offset, meta.offset + meta.len());
        for v in &mut self.data[start..end] {
            *v = 1.0;
        }
        id
    }

    pub fn view(&self, id: TensorId) -> ArrayView2<'_, f64> {
        let m = &self.metas[id.0];
        ArrayView2::from_shape((m.rows, m.cols), &self.data[m.offset..m.offset + m.len()])
            .expect("meta shape matches storage")
    }

    pub fn view_mut(&mut self, id: TensorId) -> ArrayViewMut2<'_, f64> {
        let m = &self.metas[id.0];
        let (offset, len) = (m.offset, m.len());
        ArrayViewMut2::from_shape((m.rows, m.cols), &mut self.data[offset..offset + len])
            .expect("meta shape matches storage")
    }

    pub fn meta(&self, id: TensorId) -> &TensorMeta {
        &self.metas[id.0]
    }

    pub fn metas(&self) -> &[TensorMeta] {
        &self.metas
    }

    pub fn id_by_name(&self, name: &str) -> Option<TensorId> {
        self.index.get(name).copied().map(TensorId)
    }

    pub fn n_scalars(&self) -> usize {
        self.data.len()
    }

    pub fn n_tensors(&self) -> usize {
        self.metas.len()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            data: vec![0.0; self.data.len()],
        }
    }

    /// Mutable gradient view for one tensor (same layout as params).
    pub fn grad_view<'g>(&self, grads: &'g mut Grads, id: TensorId) -> ArrayViewMut2<'g, f64> {
        let m = &self.metas[id.0];
        ArrayViewMut2::from_shape(
            (m.rows, m.cols),
            &mut grads.data[m.offset..m.offset + m.len()],
        )
        .expect("meta shape matches storage")
    }

    /// Zeroes every scalar of one tensor (used by invariance tests that
    /// switch off a projection).
    pub fn zero_tensor(&mut self, id: TensorId) {
        let m = &self.metas[id.0];
        let (start, end) = (m.offset, m.offset + m.len());
        for v in &mut self.data[start..end] {
            *v = 0.0;
        }
    }

    /// Name of the first tensor whose gradient contains a non-finite
    /// value, if any.
    pub fn find_non_finite(&self, grads: &Grads) -> Option<&str> {
        for m in &self.metas {
            if grads.data[m.offset..m.offset + m.len()]
                .iter()
                .any(|v| !v.is_finite())
            {
                return Some(&m.name);
            }
        }
        None
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient buffer laid out exactly like the parameter vector.
#[derive(Debug, Clone)]
pub struct Grads {
    pub data: Vec<f64>,
}

impl Grads {
    pub fn add_assign(&mut self, other: &Grads) -> Result<()> {
        if self.data.len() != other.data.len() {
            return Err(Error::invalid("gradient buffers have different layouts"));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }
}
