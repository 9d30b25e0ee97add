//! Dense `(batch, channels, length)` feature blocks.

use crate::error::{bail, Result};

/// Real-valued feature block laid out row-major as `(B, C, L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl FrameTensor {
    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            bail!(Shape, "all dimensions must be positive, got {shape:?}");
        }
        let expected = shape[0] * shape[1] * shape[2];
        if data.len() != expected {
            bail!(
                Shape,
                "data length {} does not match shape {shape:?} ({expected})",
                data.len()
            );
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            bail!(Domain, "non-finite value at flat index {i}");
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized tensor {shape:?}");
        Self {
            shape,
            data: vec![0.0; shape[0] * shape[1] * shape[2]],
        }
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        for b in 0..shape[0] {
            for c in 0..shape[1] {
                for l in 0..shape[2] {
                    t.data[(b * shape[1] + c) * shape[2] + l] = f(b, c, l);
                }
            }
        }
        t
    }

    /// Builds a tensor without the finiteness scan. Shape must still agree.
    pub(crate) fn from_raw(shape: [usize; 3], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape[0] * shape[1] * shape[2]);
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.shape[2]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, l: usize) -> f64 {
        self.data[(b * self.shape[1] + c) * self.shape[2] + l]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, c: usize, l: usize) -> &mut f64 {
        &mut self.data[(b * self.shape[1] + c) * self.shape[2] + l]
    }

    /// One `(batch, channel)` row of length `L`.
    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        let start = (b * self.shape[1] + c) * self.shape[2];
        &self.data[start..start + self.shape[2]]
    }

    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let start = (b * self.shape[1] + c) * self.shape[2];
        let len = self.shape[2];
        &mut self.data[start..start + len]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            bail!(Shape, "{:?} vs {:?}", self.shape, other.shape);
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self {
            shape: self.shape,
            data,
        })
    }

    pub fn mean_squared_error(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            bail!(Shape, "{:?} vs {:?}", self.shape, other.shape);
        }
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Stacks tensors with equal `(C, L)` along the batch axis.
    pub fn concat_batch(items: &[FrameTensor]) -> Result<Self> {
        let Some(first) = items.first() else {
            bail!(Shape, "cannot concatenate an empty list");
        };
        let [_, c, l] = first.shape;
        let mut data = Vec::new();
        let mut batch = 0;
        for item in items {
            if item.shape[1] != c || item.shape[2] != l {
                bail!(Shape, "batch item {:?} differs from ({c}, {l})", item.shape);
            }
            batch += item.shape[0];
            data.extend_from_slice(&item.data);
        }
        Ok(Self {
            shape: [batch, c, l],
            data,
        })
    }

    /// Extracts batch item `b` as a `(1, C, L)` tensor.
    pub fn batch_item(&self, b: usize) -> Self {
        let n = self.shape[1] * self.shape[2];
        Self {
            shape: [1, self.shape[1], self.shape[2]],
            data: self.data[b * n..(b + 1) * n].to_vec(),
        }
    }
}
