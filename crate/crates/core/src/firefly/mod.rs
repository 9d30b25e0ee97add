//! Firefly-style convolutional codec around the GFSQ bottleneck.

mod blocks;
mod codec;
mod conv;
mod sampling;

pub use blocks::{parallel_block, stack_and_average, ParallelBlockSpec, ResBlock};
pub use codec::{codec_decode, codec_encode, CodecArch, CodecModel, Layer, LayerArch, QuantMode};
pub use conv::{dws_conv1d, silu, silu_grad, ConvSpec};
pub use sampling::{downsampled_len, f_down_reference, f_up_reference, Downsample, SamplingMode, Upsample};
