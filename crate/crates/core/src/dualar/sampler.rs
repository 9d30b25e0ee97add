use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    #[default]
    Greedy,
    TopK,
}

/// Decoding rule for token and codebook logits.
///
/// `seed` initializes the sampler's stream once per generation session; a
/// standalone [`sample`] call draws the first value of that stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSpec {
    pub mode: SamplerMode,
    pub k: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self::greedy()
    }
}

impl SamplerSpec {
    pub fn greedy() -> Self {
        Self {
            mode: SamplerMode::Greedy,
            k: 1,
            temperature: 1.0,
            seed: 0,
        }
    }

    pub fn top_k(k: usize, temperature: f64, seed: u64) -> Self {
        Self {
            mode: SamplerMode::TopK,
            k,
            temperature,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == SamplerMode::TopK {
            if self.k == 0 {
                bail!(Config, "top_k needs k >= 1");
            }
            if !(self.temperature > 0.0) || !self.temperature.is_finite() {
                bail!(
                    Config,
                    "top_k needs a positive finite temperature, got {}",
                    self.temperature
                );
            }
        }
        Ok(())
    }
}

fn check_logits<T: num_traits::Float>(logits: &[T]) -> Result<()> {
    if logits.iter().any(|v| v.is_nan() || *v == T::infinity()) {
        bail!(Domain, "logits contain NaN or +inf");
    }
    if logits.iter().all(|v| *v == T::neg_infinity()) {
        bail!(Domain, "all {} logits are -inf", logits.len());
    }
    Ok(())
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax<T: num_traits::Float>(logits: &[T]) -> Result<usize> {
    check_logits(logits)?;
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

fn top_k_draw<T: num_traits::Float>(logits: &[T], k: usize, temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let mut order: Vec<usize> = (0..logits.len()).filter(|&i| logits[i] != T::neg_infinity()).collect();
    // stable sort keeps lower indices first among equal logits
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap());
    order.truncate(k);
    let scaled: Vec<f64> = order
        .iter()
        .map(|&i| logits[i].to_f64().unwrap() / temperature)
        .collect();
    let max = scaled[0];
    let weights: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (&i, w) in order.iter().zip(&weights) {
        if u < *w {
            return i;
        }
        u -= w;
    }
    *order.last().unwrap()
}

/// Draws one index from `logits` with a fresh stream seeded by `spec.seed`.
pub fn sample<T: num_traits::Float>(logits: &[T], spec: &SamplerSpec) -> Result<usize> {
    Sampler::new(*spec)?.next(logits)
}

/// A sampler with its own deterministic random stream, for one session.
#[derive(Debug, Clone)]
pub struct Sampler {
    spec: SamplerSpec,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(spec: SamplerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
        })
    }

    pub fn spec(&self) -> &SamplerSpec {
        &self.spec
    }

    pub fn next<T: num_traits::Float>(&mut self, logits: &[T]) -> Result<usize> {
        match self.spec.mode {
            SamplerMode::Greedy => argmax(logits),
            SamplerMode::TopK => {
                check_logits(logits)?;
                Ok(top_k_draw(logits, self.spec.k, self.spec.temperature, &mut self.rng))
            }
        }
    }
}
