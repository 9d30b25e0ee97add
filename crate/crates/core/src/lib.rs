//! Grouped finite scalar quantization, a Firefly-style convolutional codec,
//! a Dual-AR (slow/fast) streaming generator with KV caching, desk-scale
//! training utilities and the `.ffc` / `.ffm` byte formats.

// `!(x > 0.0)` is used on purpose: it rejects NaN as well as non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod bitstream;
pub mod dualar;
pub mod error;
pub mod firefly;
pub mod gfsq;
pub mod rvq;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use gfsq::{CodeGrid, GfsqConfig};
pub use tensor::FrameTensor;

/// Environment variable capping internal parallelism.
pub const THREADS_ENV: &str = "FISHCORE_THREADS";

/// Rayon pool sized by `FISHCORE_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v} is not a positive integer")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))
}
