//! Residual vector quantization, kept as an ablation baseline for GFSQ.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Stage codebooks laid out `(stage, codeword, dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvqConfig {
    stages: usize,
    codewords_per_stage: usize,
    dim: usize,
    codebooks: Vec<f64>,
}

impl RvqConfig {
    pub fn new(stages: usize, codewords_per_stage: usize, dim: usize, codebooks: Vec<f64>) -> Result<Self> {
        if stages == 0 || codewords_per_stage == 0 || dim == 0 {
            bail!(Config, "stages, codewords and dim must be positive");
        }
        if codebooks.len() != stages * codewords_per_stage * dim {
            bail!(
                Shape,
                "{} codebook values for ({stages}, {codewords_per_stage}, {dim})",
                codebooks.len()
            );
        }
        if codebooks.iter().any(|v| !v.is_finite()) {
            bail!(Config, "codebook entries must be finite");
        }
        Ok(Self {
            stages,
            codewords_per_stage,
            dim,
            codebooks,
        })
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codeword(&self, stage: usize, index: usize) -> &[f64] {
        let start = (stage * self.codewords_per_stage + index) * self.dim;
        &self.codebooks[start..start + self.dim]
    }
}

/// Encodes `vectors` (row-major `(N, dim)`) into `(N, stages)` indices.
pub fn rvq_encode(vectors: &[f64], config: &RvqConfig) -> Result<Vec<u32>> {
    let dim = config.dim;
    if !vectors.len().is_multiple_of(dim) {
        bail!(Shape, "{} values are not a multiple of dim {dim}", vectors.len());
    }
    if vectors.iter().any(|v| !v.is_finite()) {
        bail!(Domain, "input vectors must be finite");
    }
    let mut out = Vec::with_capacity(vectors.len() / dim * config.stages);
    let mut residual = vec![0.0; dim];
    for v in vectors.chunks_exact(dim) {
        residual.copy_from_slice(v);
        for stage in 0..config.stages {
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for k in 0..config.codewords_per_stage {
                let dist: f64 = config
                    .codeword(stage, k)
                    .iter()
                    .zip(&residual)
                    .map(|(c, r)| (c - r) * (c - r))
                    .sum();
                // strict comparison keeps the lowest index on ties
                if dist < best_dist {
                    best_dist = dist;
                    best = k;
                }
            }
            for (r, c) in residual.iter_mut().zip(config.codeword(stage, best)) {
                *r -= c;
            }
            out.push(best as u32);
        }
    }
    Ok(out)
}

/// Sums the selected codewords of the first `stages_used` stages.
pub fn rvq_decode(indices: &[u32], config: &RvqConfig, stages_used: usize) -> Result<Vec<f64>> {
    if stages_used > config.stages {
        bail!(Domain, "requested {stages_used} stages, config has {}", config.stages);
    }
    if !indices.len().is_multiple_of(config.stages) {
        bail!(
            Shape,
            "{} indices are not a multiple of {} stages",
            indices.len(),
            config.stages
        );
    }
    let mut out = Vec::with_capacity(indices.len() / config.stages * config.dim);
    for row in indices.chunks_exact(config.stages) {
        let mut acc = vec![0.0; config.dim];
        for (stage, &k) in row.iter().take(stages_used).enumerate() {
            if k as usize >= config.codewords_per_stage {
                bail!(Data, "index {k} out of range at stage {stage}");
            }
            for (a, c) in acc.iter_mut().zip(config.codeword(stage, k as usize)) {
                *a += c;
            }
        }
        out.extend(acc);
    }
    Ok(out)
}
