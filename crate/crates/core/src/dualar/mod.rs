//! Dual autoregressive generator: a slow transformer over text and semantic
//! tokens and a fast transformer over the codebook positions of each frame.

mod cache;
mod config;
mod generate;
pub mod layers;
mod model;
mod sampler;
mod weights;

pub use cache::{KvCache, StackCache};
pub use config::{DualArConfig, Token};
pub use generate::{generate, EventLog, FrameCodes, GenEvent, Generator};
pub use layers::Real;
pub use model::{fast_forward, slow_forward, slow_loss_and_grad, slow_step, SlowOutput};
pub use sampler::{argmax, sample, Sampler, SamplerMode, SamplerSpec};
pub use weights::{BlockWeights, DualArWeights};
