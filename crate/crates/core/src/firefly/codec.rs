use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::ParallelBlockSpec;
use super::conv::{silu, silu_grad, ConvSpec};
use super::sampling::{downsampled_len, f_down_reference, f_up_reference, Downsample, SamplingMode, Upsample};
use crate::bitstream::WeightSet;
use crate::error::{bail, Result};
use crate::gfsq::{gfsq_decode, gfsq_encode, quantize_latent, CodeGrid, GfsqConfig};
use crate::tensor::FrameTensor;
use crate::train::{ste_quantize, surrogate_quantize};

/// One entry of the encoder or decoder layer list in the architecture sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerArch {
    Conv {
        out_channels: usize,
        kernel: usize,
        dilation: usize,
    },
    Silu,
    /// `(kernel, dilation)` per ResBlock branch.
    Parallel {
        branches: [[usize; 2]; 3],
    },
}

/// Architecture sidecar: layer lists, kernels, dilations and the quantizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecArch {
    pub in_channels: usize,
    pub quantizer: GfsqConfig,
    #[serde(default)]
    pub sampling: SamplingMode,
    pub encoder: Vec<LayerArch>,
    pub decoder: Vec<LayerArch>,
}

impl CodecArch {
    /// Empty stacks around the quantizer; with reference sampling the codec
    /// reduces to plain GFSQ.
    pub fn identity(quantizer: GfsqConfig, sampling: SamplingMode) -> Self {
        Self {
            in_channels: quantizer.latent_channels(),
            quantizer,
            sampling,
            encoder: vec![],
            decoder: vec![],
        }
    }

    /// Small single-channel codec used by the desk-scale training runs.
    pub fn toy(quantizer: GfsqConfig, hidden: usize) -> Self {
        let latent = quantizer.latent_channels();
        let parallel = LayerArch::Parallel {
            branches: [[3, 1], [3, 3], [5, 2]],
        };
        Self {
            in_channels: 1,
            quantizer,
            sampling: SamplingMode::Learned,
            encoder: vec![
                LayerArch::Conv {
                    out_channels: hidden,
                    kernel: 5,
                    dilation: 1,
                },
                parallel.clone(),
                LayerArch::Silu,
                LayerArch::Conv {
                    out_channels: latent,
                    kernel: 3,
                    dilation: 1,
                },
            ],
            decoder: vec![
                LayerArch::Conv {
                    out_channels: hidden,
                    kernel: 3,
                    dilation: 1,
                },
                parallel,
                LayerArch::Silu,
                LayerArch::Conv {
                    out_channels: 1,
                    kernel: 5,
                    dilation: 1,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Layer {
    Conv(ConvSpec),
    Silu,
    Parallel(ParallelBlockSpec),
}

impl Layer {
    fn forward(&self, x: &FrameTensor) -> Result<FrameTensor> {
        match self {
            Layer::Conv(c) => c.forward(x),
            Layer::Silu => Ok(x.map(silu)),
            Layer::Parallel(p) => p.forward(x),
        }
    }

    fn backward(&self, x: &FrameTensor, upstream: &FrameTensor, grad: &mut Layer) -> Result<FrameTensor> {
        match (self, grad) {
            (Layer::Conv(c), Layer::Conv(g)) => c.backward(x, upstream, g),
            (Layer::Silu, Layer::Silu) => upstream.zip_map(x, |g, v| g * silu_grad(v)),
            (Layer::Parallel(p), Layer::Parallel(g)) => p.backward(x, upstream, g),
            _ => bail!(Internal, "gradient layout does not match model"),
        }
    }

    fn tensors(&self, prefix: &str, out: &mut Vec<(String, Vec<usize>, Vec<f64>)>) {
        match self {
            Layer::Conv(c) => {
                for (name, shape, data) in c.tensors() {
                    out.push((format!("{prefix}.{name}"), shape, data.to_vec()));
                }
            }
            Layer::Silu => {}
            Layer::Parallel(p) => {
                for (i, branch) in p.branches.iter().enumerate() {
                    for (conv, tag) in [(&branch.conv1, "conv1"), (&branch.conv2, "conv2")] {
                        for (name, shape, data) in conv.tensors() {
                            out.push((format!("{prefix}.branch{i}.{tag}.{name}"), shape, data.to_vec()));
                        }
                    }
                }
            }
        }
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<f64>>) {
        match self {
            Layer::Conv(c) => out.extend(c.tensors_mut()),
            Layer::Silu => {}
            Layer::Parallel(p) => {
                for branch in p.branches.iter_mut() {
                    out.extend(branch.conv1.tensors_mut());
                    out.extend(branch.conv2.tensors_mut());
                }
            }
        }
    }
}

/// How the bottleneck behaves in a training forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Grid quantization forward, straight-through (round only) backward.
    Ste,
    /// `tanh` bound without rounding, differentiable end to end.
    Surrogate,
}

/// Encoder stack, `f_down`, GFSQ bottleneck, `f_up`, decoder stack.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel {
    arch: CodecArch,
    encoder: Vec<Layer>,
    decoder: Vec<Layer>,
    down: Option<Downsample>,
    up: Option<Upsample>,
}

fn build_stack(layers: &[LayerArch], mut channels: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<Layer>, usize)> {
    let mut out = Vec::with_capacity(layers.len());
    for arch in layers {
        out.push(match arch {
            LayerArch::Conv {
                out_channels,
                kernel,
                dilation,
            } => {
                let c = ConvSpec::init(channels, *out_channels, *kernel, *dilation, rng)?;
                channels = *out_channels;
                Layer::Conv(c)
            }
            LayerArch::Silu => Layer::Silu,
            LayerArch::Parallel { branches } => {
                let [a, b, c] = branches;
                Layer::Parallel(ParallelBlockSpec::init(
                    channels,
                    [(a[0], a[1]), (b[0], b[1]), (c[0], c[1])],
                    rng,
                )?)
            }
        });
    }
    Ok((out, channels))
}

impl CodecModel {
    pub fn new(arch: CodecArch, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let latent = arch.quantizer.latent_channels();
        if arch.in_channels == 0 {
            bail!(Config, "in_channels must be positive");
        }
        let (encoder, enc_out) = build_stack(&arch.encoder, arch.in_channels, &mut rng)?;
        if enc_out != latent {
            bail!(Config, "encoder ends with {enc_out} channels, quantizer needs {latent}");
        }
        let (decoder, dec_out) = build_stack(&arch.decoder, latent, &mut rng)?;
        if dec_out != arch.in_channels {
            bail!(
                Config,
                "decoder ends with {dec_out} channels, input has {}",
                arch.in_channels
            );
        }
        let hop = arch.quantizer.hop();
        let (down, up) = match arch.sampling {
            SamplingMode::Learned => (Some(Downsample::new(latent, hop)?), Some(Upsample::new(latent, hop)?)),
            SamplingMode::Reference => (None, None),
        };
        Ok(Self {
            arch,
            encoder,
            decoder,
            down,
            up,
        })
    }

    pub fn arch(&self) -> &CodecArch {
        &self.arch
    }

    pub fn quantizer(&self) -> &GfsqConfig {
        &self.arch.quantizer
    }

    /// Same layout, every parameter zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            l.tensors(&format!("encoder.{i}"), &mut out);
        }
        if let Some(d) = &self.down {
            let shape = vec![d.channels, d.channels, d.hop];
            out.push(("down.weight".into(), shape, d.weight.clone()));
            out.push(("down.bias".into(), vec![d.channels], d.bias.clone()));
        }
        if let Some(u) = &self.up {
            let shape = vec![u.channels, u.channels, u.hop];
            out.push(("up.weight".into(), shape, u.weight.clone()));
            out.push(("up.bias".into(), vec![u.channels], u.bias.clone()));
        }
        for (i, l) in self.decoder.iter().enumerate() {
            l.tensors(&format!("decoder.{i}"), &mut out);
        }
        out
    }

    /// Parameter buffers in the same order as [`CodecModel::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in self.encoder.iter_mut() {
            l.tensors_mut(&mut out);
        }
        if let Some(d) = self.down.as_mut() {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        if let Some(u) = self.up.as_mut() {
            out.push(&mut u.weight);
            out.push(&mut u.bias);
        }
        for l in self.decoder.iter_mut() {
            l.tensors_mut(&mut out);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.named_tensors().into_iter().flat_map(|t| t.2).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            bail!(Shape, "{} values for {} parameters", flat.len(), self.parameter_count());
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn to_weights(&self) -> Result<WeightSet> {
        let mut set = WeightSet::new();
        for (name, shape, data) in self.named_tensors() {
            set.insert(name, shape, data.iter().map(|&v| v as f32).collect())?;
        }
        Ok(set)
    }

    /// Rebuilds a model from an architecture and a weight file.
    pub fn from_weights(arch: CodecArch, weights: &WeightSet) -> Result<Self> {
        let mut model = Self::new(arch, 0)?;
        let names = model.named_tensors();
        if weights.len() != names.len() {
            bail!(
                Format,
                "weight file has {} records, architecture needs {}",
                weights.len(),
                names.len()
            );
        }
        let mut values = Vec::with_capacity(names.len());
        for (name, shape, _) in &names {
            let Some(rec) = weights.get(name) else {
                bail!(Format, "missing weight record {name}");
            };
            if &rec.shape != shape {
                bail!(Shape, "record {name} has shape {:?}, expected {shape:?}", rec.shape);
            }
            values.push(rec.data.iter().map(|&v| v as f64).collect::<Vec<_>>());
        }
        for (t, v) in model.tensors_mut().into_iter().zip(values) {
            *t = v;
        }
        Ok(model)
    }

    fn check_input(&self, input: &FrameTensor) -> Result<()> {
        if input.channels() != self.arch.in_channels {
            bail!(
                Shape,
                "codec expects {} input channels, got {}",
                self.arch.in_channels,
                input.channels()
            );
        }
        Ok(())
    }

    fn run_stack(layers: &[Layer], x: &FrameTensor, acts: Option<&mut Vec<FrameTensor>>) -> Result<FrameTensor> {
        let mut cur = x.clone();
        match acts {
            Some(acts) => {
                for layer in layers {
                    let next = layer.forward(&cur)?;
                    acts.push(std::mem::replace(&mut cur, next));
                }
            }
            None => {
                for layer in layers {
                    cur = layer.forward(&cur)?;
                }
            }
        }
        Ok(cur)
    }

    pub fn f_down(&self, x: &FrameTensor) -> Result<FrameTensor> {
        match &self.down {
            Some(d) => d.forward(x),
            None => f_down_reference(x, self.arch.quantizer.hop()),
        }
    }

    pub fn f_up(&self, x: &FrameTensor, target_len: usize) -> Result<FrameTensor> {
        match &self.up {
            Some(u) => u.forward(x, target_len),
            None => f_up_reference(x, self.arch.quantizer.hop(), target_len),
        }
    }

    /// Encoder stack and `f_down`: the continuous latent fed to GFSQ.
    pub fn encode_latent(&self, input: &FrameTensor) -> Result<FrameTensor> {
        self.check_input(input)?;
        let z = Self::run_stack(&self.encoder, input, None)?;
        self.f_down(&z)
    }

    pub fn encode(&self, input: &FrameTensor) -> Result<CodeGrid> {
        gfsq_encode(&self.encode_latent(input)?, &self.arch.quantizer)
    }

    pub fn decode(&self, codes: &CodeGrid, target_len: usize) -> Result<FrameTensor> {
        if codes.config() != &self.arch.quantizer {
            bail!(Config, "code grid was produced by a different quantizer");
        }
        let q = gfsq_decode(codes)?;
        let u = self.f_up(&q, target_len)?;
        Self::run_stack(&self.decoder, &u, None)
    }

    /// Full forward pass through the bottleneck in the given mode.
    pub fn reconstruct(&self, input: &FrameTensor, mode: QuantMode) -> Result<FrameTensor> {
        let d = self.encode_latent(input)?;
        let q = match mode {
            QuantMode::Ste => quantize_latent(&d, &self.arch.quantizer)?,
            QuantMode::Surrogate => d.map(f64::tanh),
        };
        let u = self.f_up(&q, input.len())?;
        Self::run_stack(&self.decoder, &u, None)
    }

    /// Mean squared reconstruction error and its gradient for every parameter.
    pub fn loss_and_grad(&self, input: &FrameTensor, mode: QuantMode) -> Result<(f64, CodecModel)> {
        self.check_input(input)?;
        let len = input.len();
        let hop = self.arch.quantizer.hop();
        let mut enc_acts = Vec::with_capacity(self.encoder.len());
        let z = Self::run_stack(&self.encoder, input, Some(&mut enc_acts))?;
        let d = self.f_down(&z)?;
        let bottleneck = match mode {
            QuantMode::Ste => ste_quantize(&d, &self.arch.quantizer)?,
            QuantMode::Surrogate => surrogate_quantize(&d),
        };
        let q = &bottleneck.quantized;
        let u = self.f_up(q, len)?;
        let mut dec_acts = Vec::with_capacity(self.decoder.len());
        let y = Self::run_stack(&self.decoder, &u, Some(&mut dec_acts))?;

        let n = y.data().len() as f64;
        let loss = y.mean_squared_error(input)?;
        let mut grad = self.zeros_like();
        let mut g = y.zip_map(input, |a, b| 2.0 * (a - b) / n)?;

        for (i, layer) in self.decoder.iter().enumerate().rev() {
            g = layer.backward(&dec_acts[i], &g, &mut grad.decoder[i])?;
        }
        g = match (&self.up, grad.up.as_mut()) {
            (Some(up), Some(gu)) => up.backward(q, &g, gu)?,
            _ => reference_up_backward(&g, hop, q.len()),
        };
        g = bottleneck.backward(&g)?;
        g = match (&self.down, grad.down.as_mut()) {
            (Some(down), Some(gd)) => down.backward(&z, &g, gd)?,
            _ => reference_down_backward(&g, hop, z.len()),
        };
        for (i, layer) in self.encoder.iter().enumerate().rev() {
            g = layer.backward(&enc_acts[i], &g, &mut grad.encoder[i])?;
        }
        Ok((loss, grad))
    }
}

fn reference_up_backward(upstream: &FrameTensor, hop: usize, frames: usize) -> FrameTensor {
    let [batch, channels, _] = upstream.shape();
    let mut out = FrameTensor::zeros([batch, channels, frames]);
    for b in 0..batch {
        for c in 0..channels {
            for (l, &g) in upstream.row(b, c).iter().enumerate() {
                *out.at_mut(b, c, l / hop) += g;
            }
        }
    }
    out
}

fn reference_down_backward(upstream: &FrameTensor, hop: usize, len: usize) -> FrameTensor {
    let [batch, channels, _] = upstream.shape();
    FrameTensor::from_fn([batch, channels, len], |b, c, l| {
        let t = l / hop;
        let width = ((t + 1) * hop).min(len) - t * hop;
        upstream.at(b, c, t) / width as f64
    })
}

/// Encoder stack → `f_down` → GFSQ encode.
pub fn codec_encode(input: &FrameTensor, model: &CodecModel) -> Result<CodeGrid> {
    model.encode(input)
}

/// GFSQ decode → `f_up` → decoder stack, truncated to `target_len`.
pub fn codec_decode(codes: &CodeGrid, model: &CodecModel, target_len: usize) -> Result<FrameTensor> {
    if downsampled_len(target_len, model.quantizer().hop()) != codes.frames() {
        bail!(Shape, "{} frames cannot restore length {target_len}", codes.frames());
    }
    model.decode(codes, target_len)
}
