use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::cache::KvCache;
use super::config::Token;
use super::layers::Real;
use super::model::{fast_forward, slow_step};
use super::sampler::{Sampler, SamplerSpec};
use super::weights::DualArWeights;
use crate::error::{bail, Result};

/// One generated frame: its semantic token and `G` codebook indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCodes {
    pub semantic: u32,
    pub codes: Vec<u32>,
}

/// Instrumentation points recorded by a [`Generator`] (and optionally by
/// its consumer) in a shared, time-stamped log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenEvent {
    FrameStarted(usize),
    FrameFinished(usize),
    Consumed(usize),
    Stopped,
}

#[derive(Debug, Clone, Default)]
pub struct EventLog(Arc<Mutex<Vec<(GenEvent, Instant)>>>);

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, event: GenEvent) {
        self.0.lock().expect("event log poisoned").push((event, Instant::now()));
    }

    pub fn snapshot(&self) -> Vec<(GenEvent, Instant)> {
        self.0.lock().expect("event log poisoned").clone()
    }

    /// Position of the first occurrence of `event`.
    pub fn position(&self, event: GenEvent) -> Option<usize> {
        self.snapshot().iter().position(|(e, _)| *e == event)
    }
}

/// Streaming frame generator. Each call to `next` runs the slow step for one
/// frame and then the fast loop over its codebooks, so a frame is handed to
/// the consumer before any work on the following frame starts.
pub struct Generator<'w, T: Real> {
    weights: &'w DualArWeights<T>,
    sampler: Sampler,
    cache: KvCache<T>,
    pending: Vec<Token>,
    produced: usize,
    max_frames: usize,
    truncated: bool,
    done: bool,
    log: Option<EventLog>,
}

/// Starts a generation session for `text` (prompt ids), followed by BOS.
pub fn generate<'w, T: Real>(
    weights: &'w DualArWeights<T>,
    text: &[u32],
    sampler: SamplerSpec,
    max_frames: usize,
) -> Result<Generator<'w, T>> {
    let c = &weights.config;
    if text.is_empty() {
        bail!(Domain, "generation needs a non-empty text prompt");
    }
    if max_frames == 0 {
        bail!(Domain, "max_frames must be at least 1");
    }
    let mut pending: Vec<Token> = text.iter().map(|&t| Token::Text(t)).collect();
    pending.push(Token::Semantic(c.bos_token));
    for t in &pending {
        t.embed_row(c)?;
    }
    let needed = pending.len() + max_frames - 1;
    if needed > c.max_seq {
        bail!(
            Capacity,
            "prompt of {} plus {max_frames} frames needs {needed} positions, max_seq is {}",
            text.len(),
            c.max_seq
        );
    }
    Ok(Generator {
        weights,
        sampler: Sampler::new(sampler)?,
        cache: KvCache::new(c),
        pending,
        produced: 0,
        max_frames,
        truncated: false,
        done: false,
        log: None,
    })
}

impl<'w, T: Real> Generator<'w, T> {
    pub fn with_log(mut self, log: EventLog) -> Self {
        self.log = Some(log);
        self
    }

    /// True when the stream stopped at `max_frames` without an EOS token.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn frames_produced(&self) -> usize {
        self.produced
    }

    fn record(&self, event: GenEvent) {
        if let Some(log) = &self.log {
            log.record(event);
        }
    }

    fn step(&mut self) -> Result<Option<FrameCodes>> {
        let c = &self.weights.config;
        let slow = slow_step(self.weights, &self.pending, &mut self.cache)?;
        let semantic = self.sampler.next(slow.last_logits())? as u32;
        if semantic == c.eos_token {
            return Ok(None);
        }
        let hidden = slow.last_hidden().to_vec();
        self.cache.fast.reset();
        let mut codes = Vec::with_capacity(c.num_codebooks);
        for _ in 0..c.num_codebooks {
            let logits = fast_forward(self.weights, &hidden, &codes, Some(&mut self.cache))?;
            codes.push(self.sampler.next(&logits)? as u32);
        }
        self.pending = vec![Token::Semantic(semantic)];
        Ok(Some(FrameCodes { semantic, codes }))
    }
}

impl<'w, T: Real> Iterator for Generator<'w, T> {
    type Item = Result<FrameCodes>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.produced == self.max_frames {
            self.truncated = true;
            self.done = true;
            self.record(GenEvent::Stopped);
            return None;
        }
        self.record(GenEvent::FrameStarted(self.produced));
        match self.step() {
            Ok(Some(frame)) => {
                self.record(GenEvent::FrameFinished(self.produced));
                self.produced += 1;
                Some(Ok(frame))
            }
            Ok(None) => {
                self.done = true;
                self.record(GenEvent::Stopped);
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}
