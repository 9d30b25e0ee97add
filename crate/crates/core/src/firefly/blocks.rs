use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::{silu, silu_grad, ConvSpec};
use crate::error::{bail, Result};
use crate::tensor::FrameTensor;

/// `x + conv2(silu(conv1(silu(x))))`. `conv1` carries the dilation,
/// `conv2` is undilated and zero-initialized so a fresh block is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResBlock {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
}

impl ResBlock {
    pub fn init(channels: usize, kernel: usize, dilation: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            conv1: ConvSpec::init(channels, channels, kernel, dilation, rng)?,
            conv2: ConvSpec::zeros(channels, channels, kernel, 1)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.conv1.in_channels
    }

    pub fn validate(&self) -> Result<()> {
        self.conv1.validate()?;
        self.conv2.validate()?;
        let c = self.channels();
        if self.conv1.out_channels != c || self.conv2.in_channels != c || self.conv2.out_channels != c {
            bail!(Config, "resblock convolutions must preserve {c} channels");
        }
        if self.conv1.stride != 1 || self.conv2.stride != 1 {
            bail!(Config, "resblock convolutions must have stride 1");
        }
        Ok(())
    }

    pub fn forward(&self, x: &FrameTensor) -> Result<FrameTensor> {
        let h = self.conv1.forward(&x.map(silu))?;
        let r = self.conv2.forward(&h.map(silu))?;
        x.zip_map(&r, |a, b| a + b)
    }

    pub fn backward(&self, x: &FrameTensor, upstream: &FrameTensor, grad: &mut ResBlock) -> Result<FrameTensor> {
        let a0 = x.map(silu);
        let h = self.conv1.forward(&a0)?;
        let a1 = h.map(silu);
        let d_a1 = self.conv2.backward(&a1, upstream, &mut grad.conv2)?;
        let d_h = d_a1.zip_map(&h, |g, v| g * silu_grad(v))?;
        let d_a0 = self.conv1.backward(&a0, &d_h, &mut grad.conv1)?;
        let d_x = d_a0.zip_map(x, |g, v| g * silu_grad(v))?;
        d_x.zip_map(upstream, |a, b| a + b)
    }
}

/// Three residual branches with distinct `(kernel, dilation)` settings whose
/// outputs are stacked and averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelBlockSpec {
    pub branches: [ResBlock; 3],
}

impl ParallelBlockSpec {
    pub fn init(channels: usize, settings: [(usize, usize); 3], rng: &mut impl Rng) -> Result<Self> {
        let [a, b, c] = settings;
        let spec = Self {
            branches: [
                ResBlock::init(channels, a.0, a.1, rng)?,
                ResBlock::init(channels, b.0, b.1, rng)?,
                ResBlock::init(channels, c.0, c.1, rng)?,
            ],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn channels(&self) -> usize {
        self.branches[0].channels()
    }

    pub fn validate(&self) -> Result<()> {
        for branch in &self.branches {
            branch.validate()?;
            if branch.channels() != self.channels() {
                bail!(Config, "parallel branches disagree on channel count");
            }
        }
        let settings: Vec<_> = self
            .branches
            .iter()
            .map(|b| (b.conv1.kernel, b.conv1.dilation))
            .collect();
        for i in 0..3 {
            for j in i + 1..3 {
                if settings[i] == settings[j] {
                    bail!(
                        Config,
                        "parallel branches {i} and {j} share (kernel, dilation) {:?}",
                        settings[i]
                    );
                }
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &FrameTensor) -> Result<FrameTensor> {
        let outputs = self.branches.iter().map(|b| b.forward(x)).collect::<Result<Vec<_>>>()?;
        stack_and_average(&outputs)
    }

    pub fn backward(
        &self,
        x: &FrameTensor,
        upstream: &FrameTensor,
        grad: &mut ParallelBlockSpec,
    ) -> Result<FrameTensor> {
        let scaled = upstream.map(|g| g / 3.0);
        let mut d_x = FrameTensor::zeros(x.shape());
        for (branch, g) in self.branches.iter().zip(grad.branches.iter_mut()) {
            let d = branch.backward(x, &scaled, g)?;
            d_x = d_x.zip_map(&d, |a, b| a + b)?;
        }
        Ok(d_x)
    }
}

pub fn parallel_block(input: &FrameTensor, spec: &ParallelBlockSpec) -> Result<FrameTensor> {
    spec.forward(input)
}

/// Elementwise mean of equally shaped branch outputs.
pub fn stack_and_average(outputs: &[FrameTensor]) -> Result<FrameTensor> {
    let Some(first) = outputs.first() else {
        bail!(Internal, "no branch outputs to average");
    };
    let mut acc = first.clone();
    for out in &outputs[1..] {
        if out.shape() != first.shape() {
            bail!(
                Internal,
                "branch output {:?} diverges from {:?}",
                out.shape(),
                first.shape()
            );
        }
        for (a, b) in acc.data_mut().iter_mut().zip(out.data()) {
            *a += b;
        }
    }
    let n = outputs.len() as f64;
    acc.data_mut().iter_mut().for_each(|v| *v /= n);
    Ok(acc)
}
