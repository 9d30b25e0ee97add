//! Desk-scale codec training: schedule, optimizer, straight-through
//! quantization, finite-difference checks and synthetic data.

mod adamw;
mod codec;
mod config;
mod gradcheck;
mod schedule;
mod ste;
mod synth;

pub use adamw::{adamw_step, OptState, ParamRef};
pub use codec::{evaluate, train_codec, CurvePoint, TrainReport};
pub use config::TrainConfig;
pub use gradcheck::grad_check;
pub use schedule::lr_at;
pub use ste::{ste_quantize, surrogate_quantize, tanh_grad, SteOutput};
pub use synth::{constant_dataset, synth_dataset, SynthSpec};
