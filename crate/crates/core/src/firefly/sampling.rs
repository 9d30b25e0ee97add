//! The `f_down` / `f_up` pair around the quantizer bottleneck.
//!
//! Learned mode uses a strided convolution (kernel = stride = hop) on the
//! zero right-padded input and a transposed convolution with the same
//! geometry. Reference mode is a parameter-free mean-pool / repeat pair used
//! by property tests and by the plain GFSQ pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::tensor::FrameTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    Learned,
    Reference,
}

/// Strided convolution `(channels, channels, hop)` plus bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Downsample {
    pub channels: usize,
    pub hop: usize,
    /// `(out, in, hop)`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Transposed convolution `(channels, channels, hop)` plus bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Upsample {
    pub channels: usize,
    pub hop: usize,
    /// `(in, out, hop)`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Number of frames after downsampling `len` samples by `hop`.
pub fn downsampled_len(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

impl Downsample {
    /// Starts out as the mean-pool over each window.
    pub fn new(channels: usize, hop: usize) -> Result<Self> {
        if channels == 0 || hop == 0 {
            bail!(Config, "downsample needs positive channels and hop");
        }
        let mut weight = vec![0.0; channels * channels * hop];
        for c in 0..channels {
            for j in 0..hop {
                weight[(c * channels + c) * hop + j] = 1.0 / hop as f64;
            }
        }
        Ok(Self {
            channels,
            hop,
            weight,
            bias: vec![0.0; channels],
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight.len() != self.channels * self.channels * self.hop || self.bias.len() != self.channels {
            bail!(
                Shape,
                "downsample weights do not match ({}, {}, {})",
                self.channels,
                self.channels,
                self.hop
            );
        }
        Ok(())
    }

    pub fn forward(&self, x: &FrameTensor) -> Result<FrameTensor> {
        let [batch, channels, len] = x.shape();
        if channels != self.channels {
            bail!(Shape, "downsample expects {} channels, got {channels}", self.channels);
        }
        let (c_n, r) = (self.channels, self.hop);
        let frames = downsampled_len(len, r);
        let mut y = FrameTensor::zeros([batch, c_n, frames]);
        for b in 0..batch {
            for o in 0..c_n {
                let out = y.row_mut(b, o);
                out.iter_mut().for_each(|v| *v = self.bias[o]);
                for c in 0..c_n {
                    let w = &self.weight[(o * c_n + c) * r..][..r];
                    let xin = x.row(b, c);
                    for (t, slot) in out.iter_mut().enumerate() {
                        let start = t * r;
                        let end = (start + r).min(len);
                        *slot += xin[start..end].iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &FrameTensor, upstream: &FrameTensor, grad: &mut Downsample) -> Result<FrameTensor> {
        let [batch, _, len] = x.shape();
        let (c_n, r) = (self.channels, self.hop);
        if upstream.shape() != [batch, c_n, downsampled_len(len, r)] {
            bail!(
                Shape,
                "upstream {:?} does not match downsample output",
                upstream.shape()
            );
        }
        let mut dx = FrameTensor::zeros(x.shape());
        for b in 0..batch {
            for o in 0..c_n {
                let dy = upstream.row(b, o);
                grad.bias[o] += dy.iter().sum::<f64>();
                for c in 0..c_n {
                    let base = (o * c_n + c) * r;
                    let xin = x.row(b, c).to_vec();
                    let dxr = dx.row_mut(b, c);
                    for (t, &g) in dy.iter().enumerate() {
                        for j in 0..r {
                            let s = t * r + j;
                            if s < len {
                                grad.weight[base + j] += g * xin[s];
                                dxr[s] += g * self.weight[base + j];
                            }
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

impl Upsample {
    /// Starts out as nearest-neighbour repetition.
    pub fn new(channels: usize, hop: usize) -> Result<Self> {
        if channels == 0 || hop == 0 {
            bail!(Config, "upsample needs positive channels and hop");
        }
        let mut weight = vec![0.0; channels * channels * hop];
        for c in 0..channels {
            for j in 0..hop {
                weight[(c * channels + c) * hop + j] = 1.0;
            }
        }
        Ok(Self {
            channels,
            hop,
            weight,
            bias: vec![0.0; channels],
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight.len() != self.channels * self.channels * self.hop || self.bias.len() != self.channels {
            bail!(
                Shape,
                "upsample weights do not match ({}, {}, {})",
                self.channels,
                self.channels,
                self.hop
            );
        }
        Ok(())
    }

    pub fn forward(&self, x: &FrameTensor, target_len: usize) -> Result<FrameTensor> {
        let [batch, channels, frames] = x.shape();
        if channels != self.channels {
            bail!(Shape, "upsample expects {} channels, got {channels}", self.channels);
        }
        check_target(frames, self.hop, target_len)?;
        let (c_n, r) = (self.channels, self.hop);
        let mut y = FrameTensor::zeros([batch, c_n, target_len]);
        for b in 0..batch {
            for o in 0..c_n {
                let out = y.row_mut(b, o);
                out.iter_mut().for_each(|v| *v = self.bias[o]);
                for c in 0..c_n {
                    let w = &self.weight[(c * c_n + o) * r..][..r];
                    for (t, &v) in x.row(b, c).iter().enumerate() {
                        for (j, &wj) in w.iter().enumerate() {
                            if let Some(slot) = out.get_mut(t * r + j) {
                                *slot += wj * v;
                            }
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &FrameTensor, upstream: &FrameTensor, grad: &mut Upsample) -> Result<FrameTensor> {
        let [batch, _, frames] = x.shape();
        let (c_n, r) = (self.channels, self.hop);
        let target_len = upstream.len();
        if upstream.shape() != [batch, c_n, target_len] {
            bail!(Shape, "upstream {:?} does not match upsample output", upstream.shape());
        }
        check_target(frames, r, target_len)?;
        let mut dx = FrameTensor::zeros(x.shape());
        for b in 0..batch {
            for o in 0..c_n {
                let dy = upstream.row(b, o);
                grad.bias[o] += dy.iter().sum::<f64>();
                for c in 0..c_n {
                    let base = (c * c_n + o) * r;
                    let xin = x.row(b, c).to_vec();
                    let dxr = dx.row_mut(b, c);
                    for t in 0..frames {
                        for j in 0..r {
                            if let Some(&g) = dy.get(t * r + j) {
                                grad.weight[base + j] += g * xin[t];
                                dxr[t] += g * self.weight[base + j];
                            }
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

fn check_target(frames: usize, hop: usize, target_len: usize) -> Result<()> {
    if target_len == 0 {
        bail!(Domain, "target length must be positive");
    }
    if target_len > frames * hop {
        bail!(Domain, "target length {target_len} exceeds {frames} frames x hop {hop}");
    }
    Ok(())
}

/// Reference downsampling: the mean of the real samples in each window of
/// `hop` (the zero tail padding is not counted).
pub fn f_down_reference(input: &FrameTensor, hop: usize) -> Result<FrameTensor> {
    if hop == 0 {
        bail!(Config, "hop must be positive");
    }
    let [batch, channels, len] = input.shape();
    let frames = downsampled_len(len, hop);
    let mut y = FrameTensor::zeros([batch, channels, frames]);
    for b in 0..batch {
        for c in 0..channels {
            let x = input.row(b, c);
            for (t, slot) in y.row_mut(b, c).iter_mut().enumerate() {
                let window = &x[t * hop..((t + 1) * hop).min(len)];
                *slot = window.iter().sum::<f64>() / window.len() as f64;
            }
        }
    }
    Ok(y)
}

/// Reference upsampling: repeat each frame `hop` times, truncated to `target_len`.
pub fn f_up_reference(input: &FrameTensor, hop: usize, target_len: usize) -> Result<FrameTensor> {
    if hop == 0 {
        bail!(Config, "hop must be positive");
    }
    let [batch, channels, frames] = input.shape();
    check_target(frames, hop, target_len)?;
    Ok(FrameTensor::from_fn([batch, channels, target_len], |b, c, l| {
        input.at(b, c, l / hop)
    }))
}
