use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::tensor::FrameTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_signals: usize,
    pub length: usize,
    pub num_tones: usize,
    pub seed: u64,
}

/// Sums of random-frequency, random-phase sinusoids, each signal scaled so
/// its peak magnitude is 1. Every signal draws from its own ChaCha stream,
/// so the result does not depend on thread count or evaluation order.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<FrameTensor>> {
    if spec.num_signals == 0 || spec.length == 0 {
        bail!(Config, "num_signals and length must be positive");
    }
    let build = || {
        (0..spec.num_signals)
            .into_par_iter()
            .map(|i| synth_signal(spec, i))
            .collect::<Vec<_>>()
    };
    let signals = crate::thread_pool()?.install(build);
    Ok(signals)
}

fn synth_signal(spec: &SynthSpec, index: usize) -> FrameTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let tones: Vec<(f64, f64, f64)> = (0..spec.num_tones)
        .map(|_| {
            let freq = rng.gen_range(0.004..0.06);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = rng.gen_range(0.3..1.0);
            (freq, phase, amp)
        })
        .collect();
    let mut data: Vec<f64> = (0..spec.length)
        .map(|t| {
            tones
                .iter()
                .map(|&(f, p, a)| a * (std::f64::consts::TAU * f * t as f64 + p).sin())
                .sum()
        })
        .collect();
    let peak = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        data.iter_mut().for_each(|v| *v /= peak);
    }
    FrameTensor::from_raw([1, 1, spec.length], data)
}

/// Constant signals, one per value.
pub fn constant_dataset(values: &[f64], length: usize) -> Result<Vec<FrameTensor>> {
    values
        .iter()
        .map(|&v| FrameTensor::new([1, 1, length], vec![v; length]))
        .collect()
}
