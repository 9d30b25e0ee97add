//! Real-time-factor and first-packet latency measurement for the generator.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bitstream::save_model;
use crate::dualar::{generate, DualArWeights, SamplerSpec};
use crate::error::{bail, Result};

/// Timing summary over repeated generation runs; each timing is the median
/// across repeats. `rtf` is synthesized audio seconds per wall second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rtf: f64,
    pub first_packet_ms: f64,
    pub total_ms: f64,
    pub ms_per_frame: f64,
    pub frames: usize,
    pub repeats: usize,
    pub frame_rate: f64,
    /// SHA-256 over the model config, weights, sampler and prompt.
    pub fingerprint: String,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn fingerprint(weights: &DualArWeights<f32>, sampler: &SamplerSpec, text: &[u32]) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&weights.config).map_err(|e| crate::Error::Internal(e.to_string()))?);
    hasher.update(save_model(&weights.to_weights()?)?);
    hasher.update(serde_json::to_vec(sampler).map_err(|e| crate::Error::Internal(e.to_string()))?);
    for t in text {
        hasher.update(t.to_le_bytes());
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Runs `repeats` sequential generation sessions and reports medians.
pub fn bench_generate(
    weights: &DualArWeights<f32>,
    text: &[u32],
    sampler: SamplerSpec,
    max_frames: usize,
    repeats: usize,
) -> Result<BenchReport> {
    if repeats < 3 {
        bail!(Config, "bench needs at least 3 repeats, got {repeats}");
    }
    let mut firsts = Vec::with_capacity(repeats);
    let mut totals = Vec::with_capacity(repeats);
    let mut frames = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let mut first = None;
        let mut count = 0;
        for frame in generate(weights, text, sampler, max_frames)? {
            frame?;
            first.get_or_insert_with(|| start.elapsed().as_secs_f64() * 1e3);
            count += 1;
        }
        let total = start.elapsed().as_secs_f64() * 1e3;
        let Some(first) = first else {
            bail!(Domain, "generation produced no frames to time");
        };
        if *frames.get_or_insert(count) != count {
            bail!(Internal, "frame count changed between repeats ({count} vs {frames:?})");
        }
        firsts.push(first);
        totals.push(total);
    }
    let frames = frames.unwrap_or(0);
    let first_packet_ms = median(&mut firsts);
    let total_ms = median(&mut totals);
    let frame_rate = weights.config.frame_rate;
    let audio_secs = frames as f64 / frame_rate;
    Ok(BenchReport {
        rtf: audio_secs / (total_ms / 1e3).max(f64::MIN_POSITIVE),
        first_packet_ms,
        total_ms,
        ms_per_frame: total_ms / frames as f64,
        frames,
        repeats,
        frame_rate,
        fingerprint: fingerprint(weights, &sampler, text)?,
    })
}
