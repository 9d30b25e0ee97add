use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::tensor::FrameTensor;

/// Depthwise-separable 1-D convolution: a per-channel dilated convolution
/// with zero "same" padding, then a pointwise `1x1` channel mix plus bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    /// `(in_channels, kernel)`
    pub depthwise: Vec<f64>,
    /// `(out_channels, in_channels)`
    pub pointwise: Vec<f64>,
    /// `(out_channels)`
    pub bias: Vec<f64>,
}

impl ConvSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        stride: usize,
        depthwise: Vec<f64>,
        pointwise: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let spec = Self {
            in_channels,
            out_channels,
            kernel,
            dilation,
            stride,
            depthwise,
            pointwise,
            bias,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Result<Self> {
        Self::new(
            in_channels,
            out_channels,
            kernel,
            dilation,
            1,
            vec![0.0; in_channels * kernel],
            vec![0.0; in_channels * out_channels],
            vec![0.0; out_channels],
        )
    }

    /// Uniform fan-in initialization.
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut spec = Self::zeros(in_channels, out_channels, kernel, dilation)?;
        let dw_bound = 1.0 / (kernel as f64).sqrt();
        let pw_bound = 1.0 / (in_channels as f64).sqrt();
        spec.depthwise
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-dw_bound..dw_bound));
        spec.pointwise
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-pw_bound..pw_bound));
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            bail!(Config, "channel counts must be positive");
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            bail!(Config, "kernel {} must be odd", self.kernel);
        }
        if self.dilation == 0 || self.stride == 0 {
            bail!(Config, "dilation and stride must be positive");
        }
        if self.depthwise.len() != self.in_channels * self.kernel {
            bail!(
                Shape,
                "depthwise has {} weights, expected {}",
                self.depthwise.len(),
                self.in_channels * self.kernel
            );
        }
        if self.pointwise.len() != self.in_channels * self.out_channels {
            bail!(
                Shape,
                "pointwise has {} weights, expected {}",
                self.pointwise.len(),
                self.in_channels * self.out_channels
            );
        }
        if self.bias.len() != self.out_channels {
            bail!(
                Shape,
                "bias has {} entries, expected {}",
                self.bias.len(),
                self.out_channels
            );
        }
        Ok(())
    }

    pub fn receptive_field(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    pub fn parameter_count(&self) -> usize {
        self.depthwise.len() + self.pointwise.len() + self.bias.len()
    }

    pub fn output_len(&self, len: usize) -> usize {
        len.div_ceil(self.stride)
    }

    fn tap_offset(&self, j: usize) -> isize {
        (j as isize - (self.kernel as isize - 1) / 2) * self.dilation as isize
    }

    fn check_input(&self, input: &FrameTensor) -> Result<()> {
        if input.channels() != self.in_channels {
            bail!(
                Shape,
                "conv expects {} channels, got {}",
                self.in_channels,
                input.channels()
            );
        }
        Ok(())
    }

    /// Depthwise stage only, shape `(B, in_channels, L_out)`.
    fn depthwise_forward(&self, input: &FrameTensor) -> FrameTensor {
        let [batch, channels, len] = input.shape();
        let out_len = self.output_len(len);
        let mut out = FrameTensor::zeros([batch, channels, out_len]);
        for b in 0..batch {
            for c in 0..channels {
                let x = input.row(b, c);
                let w = &self.depthwise[c * self.kernel..(c + 1) * self.kernel];
                let y = out.row_mut(b, c);
                for (o, slot) in y.iter_mut().enumerate() {
                    let center = (o * self.stride) as isize;
                    let mut acc = 0.0;
                    for (j, &wj) in w.iter().enumerate() {
                        let t = center + self.tap_offset(j);
                        if t >= 0 && (t as usize) < len {
                            acc += wj * x[t as usize];
                        }
                    }
                    *slot = acc;
                }
            }
        }
        out
    }

    pub fn forward(&self, input: &FrameTensor) -> Result<FrameTensor> {
        self.check_input(input)?;
        let mid = self.depthwise_forward(input);
        Ok(pointwise(&mid, &self.pointwise, &self.bias, self.out_channels))
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dinput`.
    pub fn backward(&self, input: &FrameTensor, upstream: &FrameTensor, grad: &mut ConvSpec) -> Result<FrameTensor> {
        self.check_input(input)?;
        let [batch, channels, len] = input.shape();
        let out_len = self.output_len(len);
        if upstream.shape() != [batch, self.out_channels, out_len] {
            bail!(Shape, "upstream {:?} does not match conv output", upstream.shape());
        }
        let mid = self.depthwise_forward(input);
        let mut d_mid = FrameTensor::zeros(mid.shape());
        for b in 0..batch {
            for o in 0..self.out_channels {
                let dy = upstream.row(b, o);
                grad.bias[o] += dy.iter().sum::<f64>();
                for c in 0..channels {
                    let u = mid.row(b, c);
                    grad.pointwise[o * channels + c] += dy.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
                    let p = self.pointwise[o * channels + c];
                    for (du, &g) in d_mid.row_mut(b, c).iter_mut().zip(dy) {
                        *du += p * g;
                    }
                }
            }
        }
        let mut d_input = FrameTensor::zeros(input.shape());
        for b in 0..batch {
            for c in 0..channels {
                let x = input.row(b, c);
                let du = d_mid.row(b, c);
                let mut dx = vec![0.0; len];
                for j in 0..self.kernel {
                    let off = self.tap_offset(j);
                    let wj = self.depthwise[c * self.kernel + j];
                    let mut gw = 0.0;
                    for (o, &g) in du.iter().enumerate() {
                        let t = (o * self.stride) as isize + off;
                        if t >= 0 && (t as usize) < len {
                            gw += g * x[t as usize];
                            dx[t as usize] += wj * g;
                        }
                    }
                    grad.depthwise[c * self.kernel + j] += gw;
                }
                d_input.row_mut(b, c).copy_from_slice(&dx);
            }
        }
        Ok(d_input)
    }

    pub(crate) fn tensors(&self) -> [(&'static str, Vec<usize>, &[f64]); 3] {
        [
            ("depthwise", vec![self.in_channels, self.kernel], &self.depthwise),
            ("pointwise", vec![self.out_channels, self.in_channels], &self.pointwise),
            ("bias", vec![self.out_channels], &self.bias),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 3] {
        [&mut self.depthwise, &mut self.pointwise, &mut self.bias]
    }
}

fn pointwise(mid: &FrameTensor, weights: &[f64], bias: &[f64], out_channels: usize) -> FrameTensor {
    let [batch, channels, len] = mid.shape();
    let mut out = FrameTensor::zeros([batch, out_channels, len]);
    for b in 0..batch {
        for o in 0..out_channels {
            let y = out.row_mut(b, o);
            y.iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..channels {
                let p = weights[o * channels + c];
                if p != 0.0 {
                    for (v, &u) in y.iter_mut().zip(mid.row(b, c)) {
                        *v += p * u;
                    }
                }
            }
        }
    }
    out
}

/// Convenience wrapper matching the operator form `dws_conv1d(input, spec)`.
pub fn dws_conv1d(input: &FrameTensor, spec: &ConvSpec) -> Result<FrameTensor> {
    spec.forward(input)
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}
