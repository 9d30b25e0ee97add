//! Slow and fast stack forward passes, with and without a KV cache, plus the
//! backward pass of the slow stack's next-token loss.

use super::cache::{KvCache, StackCache};
use super::config::{DualArConfig, Token};
use super::layers::{
    causal_attention, causal_attention_backward, embed, embed_backward, layer_norm, layer_norm_backward, linear,
    linear_backward, lit, project_qkv, silu, silu_grad, softmax_in_place, AttentionShape, Real,
};
use super::weights::{BlockWeights, DualArWeights};
use crate::error::{bail, Result};

/// Slow-stack output for a run of positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowOutput<T> {
    /// Absolute position of the first row.
    pub start: usize,
    /// `(rows, D)`
    pub hidden: Vec<T>,
    /// `(rows, V_s)`
    pub token_logits: Vec<T>,
    pub dim: usize,
    pub vocab: usize,
}

impl<T: Real> SlowOutput<T> {
    pub fn rows(&self) -> usize {
        self.hidden.len() / self.dim
    }

    pub fn hidden_row(&self, t: usize) -> &[T] {
        &self.hidden[t * self.dim..(t + 1) * self.dim]
    }

    pub fn logits_row(&self, t: usize) -> &[T] {
        &self.token_logits[t * self.vocab..(t + 1) * self.vocab]
    }

    pub fn last_hidden(&self) -> &[T] {
        self.hidden_row(self.rows() - 1)
    }

    pub fn last_logits(&self) -> &[T] {
        self.logits_row(self.rows() - 1)
    }
}

fn shape_of(config: &DualArConfig) -> AttentionShape {
    AttentionShape {
        dim: config.model_dim,
        heads: config.heads,
        rope_base: config.rope_base,
    }
}

fn add_in_place<T: Real>(a: &mut [T], b: &[T]) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x = *x + y;
    }
}

fn mlp<T: Real>(x: &[T], bw: &BlockWeights<T>, config: &DualArConfig) -> Vec<T> {
    let (d, f) = (config.model_dim, config.ffn_dim);
    let b = layer_norm(x, &bw.ln2_gain, &bw.ln2_bias, lit(config.norm_eps));
    let m: Vec<T> = linear(&b, &bw.w1, d, f).into_iter().map(silu).collect();
    linear(&m, &bw.w2, f, d)
}

/// One block over a whole sequence starting at position 0.
fn block_full<T: Real>(x: &[T], bw: &BlockWeights<T>, config: &DualArConfig) -> Vec<T> {
    let a = layer_norm(x, &bw.ln1_gain, &bw.ln1_bias, lit(config.norm_eps));
    let (att, _) = causal_attention(&a, &bw.attn, shape_of(config));
    let mut x2 = x.to_vec();
    add_in_place(&mut x2, &att);
    let f = mlp(&x2, bw, config);
    add_in_place(&mut x2, &f);
    x2
}

/// One block over new rows appended after the cached positions of `layer`.
fn block_cached<T: Real>(
    x: &[T],
    bw: &BlockWeights<T>,
    config: &DualArConfig,
    cache: &mut StackCache<T>,
    layer: usize,
) -> Vec<T> {
    let d = config.model_dim;
    let hd = config.head_dim();
    let n = x.len() / d;
    let start = cache.len();
    let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
    let a = layer_norm(x, &bw.ln1_gain, &bw.ln1_bias, lit(config.norm_eps));
    let (q, k, v) = project_qkv(&a, &bw.attn, shape_of(config), start);
    cache.write(layer, &k, &v);
    let mut ctx = vec![T::zero(); n * d];
    let mut scores = Vec::with_capacity(start + n);
    for t in 0..n {
        let pos = start + t;
        for h in 0..config.heads {
            let qh = &q[t * d + h * hd..t * d + (h + 1) * hd];
            scores.clear();
            scores.extend(
                (0..=pos).map(|s| cache.key(layer, h, s).iter().zip(qh).map(|(&a, &b)| a * b).sum::<T>() * scale),
            );
            softmax_in_place(&mut scores);
            let out = &mut ctx[t * d + h * hd..t * d + (h + 1) * hd];
            for (s, &p) in scores.iter().enumerate() {
                for (o, &val) in out.iter_mut().zip(cache.value(layer, h, s)) {
                    *o = *o + p * val;
                }
            }
        }
    }
    let att = linear(&ctx, &bw.attn.wo, d, d);
    let mut x2 = x.to_vec();
    add_in_place(&mut x2, &att);
    let f = mlp(&x2, bw, config);
    add_in_place(&mut x2, &f);
    x2
}

fn run_stack<T: Real>(
    mut x: Vec<T>,
    blocks: &[BlockWeights<T>],
    config: &DualArConfig,
    cache: Option<&mut StackCache<T>>,
) -> Vec<T> {
    match cache {
        None => {
            for bw in blocks {
                x = block_full(&x, bw, config);
            }
        }
        Some(cache) => {
            let n = x.len() / config.model_dim;
            for (l, bw) in blocks.iter().enumerate() {
                x = block_cached(&x, bw, config, cache, l);
            }
            cache.advance(n);
        }
    }
    x
}

fn head<T: Real>(h: &[T], gain: &[T], bias: &[T], w: &[T], b: &[T], config: &DualArConfig) -> Vec<T> {
    let d = config.model_dim;
    let out = b.len();
    let n = layer_norm(h, gain, bias, lit(config.norm_eps));
    let mut y = linear(&n, w, d, out);
    for row in y.chunks_exact_mut(out) {
        add_in_place(row, b);
    }
    y
}

fn token_rows(tokens: &[Token], config: &DualArConfig) -> Result<Vec<usize>> {
    tokens.iter().map(|t| t.embed_row(config)).collect()
}

fn slow_rows<T: Real>(weights: &DualArWeights<T>, rows: &[usize], cache: Option<&mut StackCache<T>>) -> SlowOutput<T> {
    let c = &weights.config;
    let start = cache.as_ref().map_or(0, |c| c.len());
    let x = embed(&weights.embed, rows, c.model_dim);
    let hidden = run_stack(x, &weights.slow, c, cache);
    let token_logits = head(
        &hidden,
        &weights.slow_norm_gain,
        &weights.slow_norm_bias,
        &weights.token_head,
        &weights.token_bias,
        c,
    );
    SlowOutput {
        start,
        hidden,
        token_logits,
        dim: c.model_dim,
        vocab: c.semantic_vocab,
    }
}

/// Runs the slow stack.
///
/// Without a cache the whole sequence is recomputed and every row returned.
/// With a cache, `tokens` is the full history: the cached prefix must match
/// what was consumed before, only the remaining suffix is computed, and only
/// its rows are returned (`start` gives their absolute position).
pub fn slow_forward<T: Real>(
    weights: &DualArWeights<T>,
    tokens: &[Token],
    cache: Option<&mut KvCache<T>>,
) -> Result<SlowOutput<T>> {
    if tokens.is_empty() {
        bail!(Domain, "slow_forward needs at least one token");
    }
    let rows = token_rows(tokens, &weights.config)?;
    match cache {
        None => {
            if rows.len() > weights.config.max_seq {
                bail!(
                    Capacity,
                    "{} tokens exceed max_seq {}",
                    rows.len(),
                    weights.config.max_seq
                );
            }
            Ok(slow_rows(weights, &rows, None))
        }
        Some(cache) => {
            let done = cache.slow_rows.len();
            if rows.len() <= done || rows[..done] != cache.slow_rows[..] {
                bail!(Data, "token history does not extend the {done} cached positions");
            }
            append_slow(weights, &rows[done..], cache)
        }
    }
}

/// Appends tokens to a cached slow session and returns their rows.
pub fn slow_step<T: Real>(
    weights: &DualArWeights<T>,
    tokens: &[Token],
    cache: &mut KvCache<T>,
) -> Result<SlowOutput<T>> {
    if tokens.is_empty() {
        bail!(Domain, "slow_step needs at least one token");
    }
    let rows = token_rows(tokens, &weights.config)?;
    append_slow(weights, &rows, cache)
}

fn append_slow<T: Real>(weights: &DualArWeights<T>, rows: &[usize], cache: &mut KvCache<T>) -> Result<SlowOutput<T>> {
    cache.slow.reserve(rows.len())?;
    let out = slow_rows(weights, rows, Some(&mut cache.slow));
    cache.slow_rows.extend_from_slice(rows);
    Ok(out)
}

fn fast_inputs<T: Real>(weights: &DualArWeights<T>, frame_hidden: &[T], prefix: &[u32], from: usize) -> Result<Vec<T>> {
    let c = &weights.config;
    let d = c.model_dim;
    let mut x = Vec::with_capacity((prefix.len() + 1 - from) * d);
    for i in from..=prefix.len() {
        if i == 0 {
            x.extend_from_slice(frame_hidden);
        } else {
            let code = prefix[i - 1] as usize;
            if code >= c.codebook_vocab {
                bail!(
                    Data,
                    "codebook index {code} at position {} is outside [0, {})",
                    i - 1,
                    c.codebook_vocab
                );
            }
            let row = (i - 1) * c.codebook_vocab + code;
            let e = &weights.code_embed[row * d..(row + 1) * d];
            x.extend(linear(e, &weights.code_proj, d, d));
        }
    }
    Ok(x)
}

/// Codebook logits for position `prefix.len()` of the current frame.
///
/// With a cache, the fast cursor must not be past `prefix.len()`; rows it
/// already holds are reused. Callers reset `cache.fast` between frames.
pub fn fast_forward<T: Real>(
    weights: &DualArWeights<T>,
    frame_hidden: &[T],
    prefix: &[u32],
    cache: Option<&mut KvCache<T>>,
) -> Result<Vec<T>> {
    let c = &weights.config;
    if frame_hidden.len() != c.model_dim {
        bail!(
            Shape,
            "frame hidden has {} values, expected {}",
            frame_hidden.len(),
            c.model_dim
        );
    }
    if prefix.len() >= c.num_codebooks {
        bail!(
            Domain,
            "prefix of {} codes leaves no codebook position (G = {})",
            prefix.len(),
            c.num_codebooks
        );
    }
    let hidden = match cache {
        None => {
            let x = fast_inputs(weights, frame_hidden, prefix, 0)?;
            run_stack(x, &weights.fast, c, None)
        }
        Some(cache) => {
            let done = cache.fast.len();
            if done > prefix.len() {
                bail!(
                    Data,
                    "fast cache holds {done} positions but the prefix has {}",
                    prefix.len()
                );
            }
            let x = fast_inputs(weights, frame_hidden, prefix, done)?;
            cache.fast.reserve(prefix.len() + 1 - done)?;
            run_stack(x, &weights.fast, c, Some(&mut cache.fast))
        }
    };
    let last = &hidden[hidden.len() - c.model_dim..];
    Ok(head(
        last,
        &weights.fast_norm_gain,
        &weights.fast_norm_bias,
        &weights.codebook_head,
        &weights.codebook_bias,
        c,
    ))
}

fn block_backward<T: Real>(
    x: &[T],
    bw: &BlockWeights<T>,
    config: &DualArConfig,
    dy: &[T],
    grad: &mut BlockWeights<T>,
) -> Vec<T> {
    let (d, f) = (config.model_dim, config.ffn_dim);
    let eps = lit(config.norm_eps);
    let a = layer_norm(x, &bw.ln1_gain, &bw.ln1_bias, eps);
    let (att, _) = causal_attention(&a, &bw.attn, shape_of(config));
    let mut x2 = x.to_vec();
    add_in_place(&mut x2, &att);
    let b = layer_norm(&x2, &bw.ln2_gain, &bw.ln2_bias, eps);
    let m = linear(&b, &bw.w1, d, f);
    let s: Vec<T> = m.iter().map(|&v| silu(v)).collect();

    let ds = linear_backward(&s, &bw.w2, dy, f, d, &mut grad.w2);
    let dm: Vec<T> = ds.iter().zip(&m).map(|(&g, &v)| g * silu_grad(v)).collect();
    let db = linear_backward(&b, &bw.w1, &dm, d, f, &mut grad.w1);
    let mut dx2 = dy.to_vec();
    add_in_place(
        &mut dx2,
        &layer_norm_backward(&x2, &bw.ln2_gain, &db, eps, &mut grad.ln2_gain, &mut grad.ln2_bias),
    );
    let da = causal_attention_backward(&a, &bw.attn, shape_of(config), &dx2, &mut grad.attn);
    let mut dx = dx2;
    add_in_place(
        &mut dx,
        &layer_norm_backward(x, &bw.ln1_gain, &da, eps, &mut grad.ln1_gain, &mut grad.ln1_bias),
    );
    dx
}

/// Mean next-token cross-entropy of the slow stack over `targets` (one
/// semantic id per input position) and its gradient with respect to every
/// slow-side parameter. Fast-side gradients are left at zero.
pub fn slow_loss_and_grad<T: Real>(
    weights: &DualArWeights<T>,
    tokens: &[Token],
    targets: &[u32],
) -> Result<(T, DualArWeights<T>)> {
    let c = &weights.config;
    let (d, v) = (c.model_dim, c.semantic_vocab);
    if tokens.len() != targets.len() || tokens.is_empty() {
        bail!(Shape, "{} tokens but {} targets", tokens.len(), targets.len());
    }
    if let Some(&bad) = targets.iter().find(|&&t| t as usize >= v) {
        bail!(Data, "target {bad} is outside the semantic vocabulary");
    }
    let rows = token_rows(tokens, c)?;
    let n = rows.len();
    let x0 = embed(&weights.embed, &rows, d);
    let mut acts = vec![x0];
    for bw in &weights.slow {
        let next = block_full(acts.last().unwrap(), bw, c);
        acts.push(next);
    }
    let h = acts.last().unwrap();
    let eps = lit(c.norm_eps);
    let normed = layer_norm(h, &weights.slow_norm_gain, &weights.slow_norm_bias, eps);
    let mut logits = linear(&normed, &weights.token_head, d, v);
    for row in logits.chunks_exact_mut(v) {
        add_in_place(row, &weights.token_bias);
    }

    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut loss = T::zero();
    let mut dlogits = vec![T::zero(); n * v];
    for (t, row) in logits.chunks_exact(v).enumerate() {
        let target = targets[t] as usize;
        let mut p = row.to_vec();
        softmax_in_place(&mut p);
        loss = loss - p[target].ln() * inv_n;
        for (j, &pj) in p.iter().enumerate() {
            let one_hot = if j == target { T::one() } else { T::zero() };
            dlogits[t * v + j] = (pj - one_hot) * inv_n;
        }
    }

    let mut grad = weights.zeros_like();
    for row in dlogits.chunks_exact(v) {
        add_in_place(&mut grad.token_bias, row);
    }
    let dnormed = linear_backward(&normed, &weights.token_head, &dlogits, d, v, &mut grad.token_head);
    let mut dh = layer_norm_backward(
        h,
        &weights.slow_norm_gain,
        &dnormed,
        eps,
        &mut grad.slow_norm_gain,
        &mut grad.slow_norm_bias,
    );
    for (l, bw) in weights.slow.iter().enumerate().rev() {
        dh = block_backward(&acts[l], bw, c, &dh, &mut grad.slow[l]);
    }
    embed_backward(&rows, &dh, d, &mut grad.embed);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gfsq::GfsqConfig;

    fn toy() -> DualArWeights<f32> {
        let q = GfsqConfig::new(2, vec![3, 3], 4).unwrap();
        DualArWeights::random(DualArConfig::toy(&q), 3).unwrap()
    }

    #[test]
    fn slow_shapes() {
        let mut cfg = DualArConfig::toy(&GfsqConfig::new(1, vec![3], 2).unwrap());
        cfg.model_dim = 8;
        cfg.heads = 2;
        cfg.semantic_vocab = 11;
        cfg.bos_token = 9;
        cfg.eos_token = 10;
        let w = DualArWeights::<f32>::random(cfg, 0).unwrap();
        let toks = [Token::Text(1), Token::Text(2), Token::Semantic(9), Token::Semantic(3)];
        let out = slow_forward(&w, &toks, None).unwrap();
        assert_eq!((out.hidden.len(), out.token_logits.len()), (4 * 8, 4 * 11));
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let mut w = toy();
        w.token_head.iter_mut().for_each(|v| *v = 0.0);
        let out = slow_forward(&w, &[Token::Text(0), Token::Text(5)], None).unwrap();
        assert!(out.token_logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cached_slow_matches_full() {
        let w = toy();
        let toks: Vec<Token> = (0..10)
            .map(|i| if i < 4 { Token::Text(i * 3) } else { Token::Semantic(i) })
            .collect();
        let full = slow_forward(&w, &toks, None).unwrap();
        let mut cache = KvCache::new(&w.config);
        let first = slow_forward(&w, &toks[..4], Some(&mut cache)).unwrap();
        let mut got = first.token_logits.clone();
        for t in 5..=10 {
            let step = slow_forward(&w, &toks[..t], Some(&mut cache)).unwrap();
            assert_eq!(step.start, t - 1);
            got.extend(step.token_logits);
        }
        let diff = full
            .token_logits
            .iter()
            .zip(&got)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(diff <= 1e-5, "{diff}");
    }

    #[test]
    fn mismatched_history_is_rejected() {
        let w = toy();
        let mut cache = KvCache::new(&w.config);
        slow_forward(&w, &[Token::Text(1), Token::Text(2)], Some(&mut cache)).unwrap();
        let err = slow_forward(&w, &[Token::Text(1), Token::Text(3), Token::Text(4)], Some(&mut cache));
        assert!(matches!(err, Err(crate::Error::Data(_))));
    }

    #[test]
    fn out_of_range_tokens() {
        let w = toy();
        assert!(matches!(
            slow_forward(&w, &[Token::Text(64)], None),
            Err(crate::Error::Data(_))
        ));
        assert!(matches!(
            slow_forward(&w, &[Token::Semantic(34)], None),
            Err(crate::Error::Data(_))
        ));
    }

    #[test]
    fn slow_cache_overflow() {
        let mut w = toy();
        w.config.max_seq = 3;
        let mut cache = KvCache::new(&w.config);
        let toks = [Token::Text(0); 4];
        assert!(matches!(
            slow_forward(&w, &toks, Some(&mut cache)),
            Err(crate::Error::Capacity(_))
        ));
    }

    #[test]
    fn fast_cached_matches_full_and_is_deterministic() {
        let w = toy();
        let hidden: Vec<f32> = (0..32).map(|i| (i as f32 * 0.37).sin()).collect();
        let mut cache = KvCache::new(&w.config);
        let a0 = fast_forward(&w, &hidden, &[], Some(&mut cache)).unwrap();
        let a1 = fast_forward(&w, &hidden, &[4], Some(&mut cache)).unwrap();
        assert_eq!(a0, fast_forward(&w, &hidden, &[], None).unwrap());
        let b1 = fast_forward(&w, &hidden, &[4], None).unwrap();
        assert_eq!(b1, fast_forward(&w, &hidden, &[4], None).unwrap());
        let diff = a1.iter().zip(&b1).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(diff <= 1e-5);
        assert_eq!(a0.len(), 9);
    }

    #[test]
    fn fast_prefix_too_long() {
        let w = toy();
        let hidden = vec![0.0f32; 32];
        assert!(matches!(
            fast_forward(&w, &hidden, &[0, 0], None),
            Err(crate::Error::Domain(_))
        ));
        assert!(matches!(
            fast_forward(&w, &hidden, &[9], None),
            Err(crate::Error::Data(_))
        ));
    }
}
