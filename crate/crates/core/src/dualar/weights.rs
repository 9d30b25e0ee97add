use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::DualArConfig;
use super::layers::{lit, AttentionWeights, Real};
use crate::bitstream::WeightSet;
use crate::error::{bail, Result};

/// Pre-norm transformer block: attention and a SiLU MLP, each residual.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<T> {
    pub ln1_gain: Vec<T>,
    pub ln1_bias: Vec<T>,
    pub attn: AttentionWeights<T>,
    pub ln2_gain: Vec<T>,
    pub ln2_bias: Vec<T>,
    /// `(ffn_dim, model_dim)`
    pub w1: Vec<T>,
    /// `(model_dim, ffn_dim)`
    pub w2: Vec<T>,
}

/// All parameters of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct DualArWeights<T> {
    pub config: DualArConfig,
    /// Shared text + semantic table, `(text_vocab + semantic_vocab, D)`.
    pub embed: Vec<T>,
    pub slow: Vec<BlockWeights<T>>,
    pub slow_norm_gain: Vec<T>,
    pub slow_norm_bias: Vec<T>,
    /// `(semantic_vocab, D)`
    pub token_head: Vec<T>,
    pub token_bias: Vec<T>,
    /// One table per codebook position, `(num_codebooks · codebook_vocab, D)`.
    pub code_embed: Vec<T>,
    /// Input projection for codebook embeddings, `(D, D)`.
    pub code_proj: Vec<T>,
    pub fast: Vec<BlockWeights<T>>,
    pub fast_norm_gain: Vec<T>,
    pub fast_norm_bias: Vec<T>,
    /// `(codebook_vocab, D)`
    pub codebook_head: Vec<T>,
    pub codebook_bias: Vec<T>,
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<T> {
    (0..n).map(|_| lit(rng.gen_range(-bound..bound))).collect()
}

impl<T: Real> BlockWeights<T> {
    fn random(config: &DualArConfig, rng: &mut ChaCha8Rng) -> Self {
        let (d, f) = (config.model_dim, config.ffn_dim);
        let b = 1.0 / (d as f64).sqrt();
        Self {
            ln1_gain: vec![T::one(); d],
            ln1_bias: vec![T::zero(); d],
            attn: AttentionWeights {
                wq: uniform(rng, d * d, b),
                wk: uniform(rng, d * d, b),
                wv: uniform(rng, d * d, b),
                wo: uniform(rng, d * d, b),
            },
            ln2_gain: vec![T::one(); d],
            ln2_bias: vec![T::zero(); d],
            w1: uniform(rng, f * d, b),
            w2: uniform(rng, d * f, 1.0 / (f as f64).sqrt()),
        }
    }

    fn tensors(&self, prefix: &str, d: usize, f: usize) -> Vec<(String, Vec<usize>, &Vec<T>)> {
        vec![
            (format!("{prefix}.ln1.gain"), vec![d], &self.ln1_gain),
            (format!("{prefix}.ln1.bias"), vec![d], &self.ln1_bias),
            (format!("{prefix}.attn.wq"), vec![d, d], &self.attn.wq),
            (format!("{prefix}.attn.wk"), vec![d, d], &self.attn.wk),
            (format!("{prefix}.attn.wv"), vec![d, d], &self.attn.wv),
            (format!("{prefix}.attn.wo"), vec![d, d], &self.attn.wo),
            (format!("{prefix}.ln2.gain"), vec![d], &self.ln2_gain),
            (format!("{prefix}.ln2.bias"), vec![d], &self.ln2_bias),
            (format!("{prefix}.mlp.w1"), vec![f, d], &self.w1),
            (format!("{prefix}.mlp.w2"), vec![d, f], &self.w2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        vec![
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.attn.wq,
            &mut self.attn.wk,
            &mut self.attn.wv,
            &mut self.attn.wo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w1,
            &mut self.w2,
        ]
    }
}

impl<T: Real> DualArWeights<T> {
    /// Seeded uniform fan-in initialization; norms start at unit gain.
    pub fn random(config: DualArConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        let b = 1.0 / (d as f64).sqrt();
        Ok(Self {
            embed: uniform(&mut rng, config.embed_rows() * d, 1.0),
            slow: (0..config.slow_layers)
                .map(|_| BlockWeights::random(&config, &mut rng))
                .collect(),
            slow_norm_gain: vec![T::one(); d],
            slow_norm_bias: vec![T::zero(); d],
            token_head: uniform(&mut rng, config.semantic_vocab * d, b),
            token_bias: vec![T::zero(); config.semantic_vocab],
            code_embed: uniform(&mut rng, config.num_codebooks * config.codebook_vocab * d, 1.0),
            code_proj: uniform(&mut rng, d * d, b),
            fast: (0..config.fast_layers)
                .map(|_| BlockWeights::random(&config, &mut rng))
                .collect(),
            fast_norm_gain: vec![T::one(); d],
            fast_norm_bias: vec![T::zero(); d],
            codebook_head: uniform(&mut rng, config.codebook_vocab * d, b),
            codebook_bias: vec![T::zero(); config.codebook_vocab],
            config,
        })
    }

    /// Same layout with every parameter zero (norm gains included).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    /// Adds `bias` to the EOS logit so every slow step predicts end of stream.
    pub fn force_eos(&mut self, bias: f64) {
        let eos = self.config.eos_token as usize;
        self.token_bias[eos] = self.token_bias[eos] + lit(bias);
    }

    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &Vec<T>)> {
        let c = &self.config;
        let (d, f) = (c.model_dim, c.ffn_dim);
        let mut out = vec![("embed".to_string(), vec![c.embed_rows(), d], &self.embed)];
        for (i, b) in self.slow.iter().enumerate() {
            out.extend(b.tensors(&format!("slow.{i}"), d, f));
        }
        out.push(("slow_norm.gain".into(), vec![d], &self.slow_norm_gain));
        out.push(("slow_norm.bias".into(), vec![d], &self.slow_norm_bias));
        out.push(("token_head.weight".into(), vec![c.semantic_vocab, d], &self.token_head));
        out.push(("token_head.bias".into(), vec![c.semantic_vocab], &self.token_bias));
        out.push((
            "code_embed".into(),
            vec![c.num_codebooks * c.codebook_vocab, d],
            &self.code_embed,
        ));
        out.push(("code_proj".into(), vec![d, d], &self.code_proj));
        for (i, b) in self.fast.iter().enumerate() {
            out.extend(b.tensors(&format!("fast.{i}"), d, f));
        }
        out.push(("fast_norm.gain".into(), vec![d], &self.fast_norm_gain));
        out.push(("fast_norm.bias".into(), vec![d], &self.fast_norm_bias));
        out.push((
            "codebook_head.weight".into(),
            vec![c.codebook_vocab, d],
            &self.codebook_head,
        ));
        out.push(("codebook_head.bias".into(), vec![c.codebook_vocab], &self.codebook_bias));
        out
    }

    /// Mutable buffers in [`DualArWeights::named_tensors`] order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = vec![&mut self.embed];
        for b in self.slow.iter_mut() {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.slow_norm_gain);
        out.push(&mut self.slow_norm_bias);
        out.push(&mut self.token_head);
        out.push(&mut self.token_bias);
        out.push(&mut self.code_embed);
        out.push(&mut self.code_proj);
        for b in self.fast.iter_mut() {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.fast_norm_gain);
        out.push(&mut self.fast_norm_bias);
        out.push(&mut self.codebook_head);
        out.push(&mut self.codebook_bias);
        out
    }

    pub fn to_weights(&self) -> Result<WeightSet> {
        let mut set = WeightSet::new();
        for (name, shape, data) in self.named_tensors() {
            set.insert(
                name,
                shape,
                data.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
            )?;
        }
        Ok(set)
    }

    pub fn from_weights(config: DualArConfig, weights: &WeightSet) -> Result<Self> {
        let mut model = Self::random(config, 0)?;
        let expected: Vec<(String, Vec<usize>)> = model.named_tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        if weights.len() != expected.len() {
            bail!(
                Format,
                "weight file has {} records, generator needs {}",
                weights.len(),
                expected.len()
            );
        }
        let mut values = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let Some(rec) = weights.get(name) else {
                bail!(Format, "missing weight record {name}");
            };
            if &rec.shape != shape {
                bail!(Shape, "record {name} has shape {:?}, expected {shape:?}", rec.shape);
            }
            values.push(rec.data.iter().map(|&v| T::from_f32(v).unwrap()).collect::<Vec<T>>());
        }
        for (t, v) in model.tensors_mut().into_iter().zip(values) {
            *t = v;
        }
        Ok(model)
    }
}
