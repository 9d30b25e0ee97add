use super::layers::Real;
use crate::error::{bail, Result};

/// Key/value buffers for one transformer stack, laid out per layer as
/// `(heads, capacity, head_dim)`, with a fill cursor.
#[derive(Debug, Clone)]
pub struct StackCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    heads: usize,
    head_dim: usize,
    capacity: usize,
    len: usize,
}

impl<T: Real> StackCache<T> {
    pub fn new(layers: usize, heads: usize, head_dim: usize, capacity: usize) -> Self {
        let size = heads * capacity * head_dim;
        Self {
            keys: vec![vec![T::zero(); size]; layers],
            values: vec![vec![T::zero(); size]; layers],
            heads,
            head_dim,
            capacity,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn reset(&mut self) {
        self.len = 0;
    }

    pub fn reserve(&self, additional: usize) -> Result<()> {
        if self.len + additional > self.capacity {
            bail!(
                Capacity,
                "cache holds {} of {} positions, {additional} more requested",
                self.len,
                self.capacity
            );
        }
        Ok(())
    }

    /// Writes rows for positions `[len, len + n)` of `layer`; the cursor is
    /// advanced separately by [`StackCache::advance`] once all layers are written.
    pub(crate) fn write(&mut self, layer: usize, keys: &[T], values: &[T]) {
        let dim = self.heads * self.head_dim;
        let n = keys.len() / dim;
        debug_assert!(self.len + n <= self.capacity);
        for t in 0..n {
            let pos = self.len + t;
            for h in 0..self.heads {
                let dst = (h * self.capacity + pos) * self.head_dim;
                let src = t * dim + h * self.head_dim;
                self.keys[layer][dst..dst + self.head_dim].copy_from_slice(&keys[src..src + self.head_dim]);
                self.values[layer][dst..dst + self.head_dim].copy_from_slice(&values[src..src + self.head_dim]);
            }
        }
    }

    pub(crate) fn advance(&mut self, n: usize) {
        self.len += n;
    }

    /// Cached key for `(layer, head, pos)`.
    #[inline]
    pub(crate) fn key(&self, layer: usize, head: usize, pos: usize) -> &[T] {
        let at = (head * self.capacity + pos) * self.head_dim;
        &self.keys[layer][at..at + self.head_dim]
    }

    #[inline]
    pub(crate) fn value(&self, layer: usize, head: usize, pos: usize) -> &[T] {
        let at = (head * self.capacity + pos) * self.head_dim;
        &self.values[layer][at..at + self.head_dim]
    }
}

/// Per-session attention state for both stacks. The slow side also records
/// the token ids it has consumed so a mismatched prefix is caught.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    pub slow: StackCache<T>,
    pub fast: StackCache<T>,
    pub(crate) slow_rows: Vec<usize>,
}

impl<T: Real> KvCache<T> {
    pub fn new(config: &super::DualArConfig) -> Self {
        Self {
            slow: StackCache::new(config.slow_layers, config.heads, config.head_dim(), config.max_seq),
            fast: StackCache::new(
                config.fast_layers,
                config.heads,
                config.head_dim(),
                config.num_codebooks,
            ),
            slow_rows: Vec::new(),
        }
    }

    pub fn reset(&mut self) {
        self.slow.reset();
        self.fast.reset();
        self.slow_rows.clear();
    }
}
