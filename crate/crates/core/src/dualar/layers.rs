//! Transformer kernels on row-major `(T, D)` buffers, generic over the float
//! type so the same code runs at 32 bits for inference and 64 bits for
//! finite-difference checks. Backward passes return input gradients and
//! accumulate parameter gradients.

use num_traits::{Float, FromPrimitive};

/// Float type the generator runs on.
pub trait Real: Float + FromPrimitive + std::iter::Sum + std::fmt::Debug + Send + Sync + 'static {}

impl<T: Float + FromPrimitive + std::iter::Sum + std::fmt::Debug + Send + Sync + 'static> Real for T {}

#[inline]
pub(crate) fn lit<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("representable constant")
}

/// `y[t] = W · x[t]` for `W` of shape `(out, in)`.
pub fn linear<T: Real>(x: &[T], weight: &[T], inp: usize, out: usize) -> Vec<T> {
    let rows = x.len() / inp;
    let mut y = vec![T::zero(); rows * out];
    for t in 0..rows {
        let xr = &x[t * inp..(t + 1) * inp];
        for o in 0..out {
            let w = &weight[o * inp..(o + 1) * inp];
            y[t * out + o] = w.iter().zip(xr).map(|(&a, &b)| a * b).sum();
        }
    }
    y
}

pub fn linear_backward<T: Real>(x: &[T], weight: &[T], dy: &[T], inp: usize, out: usize, dweight: &mut [T]) -> Vec<T> {
    let rows = x.len() / inp;
    let mut dx = vec![T::zero(); rows * inp];
    for t in 0..rows {
        let xr = &x[t * inp..(t + 1) * inp];
        for o in 0..out {
            let g = dy[t * out + o];
            if g == T::zero() {
                continue;
            }
            for i in 0..inp {
                dweight[o * inp + i] = dweight[o * inp + i] + g * xr[i];
                dx[t * inp + i] = dx[t * inp + i] + g * weight[o * inp + i];
            }
        }
    }
    dx
}

/// Per-row normalization to zero mean and unit variance, then gain and bias.
pub fn layer_norm<T: Real>(x: &[T], gain: &[T], bias: &[T], eps: T) -> Vec<T> {
    let d = gain.len();
    let mut y = vec![T::zero(); x.len()];
    for (xr, yr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
        let (mean, inv) = moments(xr, eps);
        for i in 0..d {
            yr[i] = (xr[i] - mean) * inv * gain[i] + bias[i];
        }
    }
    y
}

fn moments<T: Real>(row: &[T], eps: T) -> (T, T) {
    let n = T::from_usize(row.len()).unwrap();
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

pub fn layer_norm_backward<T: Real>(x: &[T], gain: &[T], dy: &[T], eps: T, dgain: &mut [T], dbias: &mut [T]) -> Vec<T> {
    let d = gain.len();
    let n = T::from_usize(d).unwrap();
    let mut dx = vec![T::zero(); x.len()];
    for ((xr, gr), dxr) in x.chunks_exact(d).zip(dy.chunks_exact(d)).zip(dx.chunks_exact_mut(d)) {
        let (mean, inv) = moments(xr, eps);
        let xhat: Vec<T> = xr.iter().map(|&v| (v - mean) * inv).collect();
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for i in 0..d {
            dgain[i] = dgain[i] + gr[i] * xhat[i];
            dbias[i] = dbias[i] + gr[i];
            let g = gr[i] * gain[i];
            sum_g = sum_g + g;
            sum_gx = sum_gx + g * xhat[i];
        }
        for i in 0..d {
            let g = gr[i] * gain[i];
            dxr[i] = inv * (g - sum_g / n - xhat[i] * sum_gx / n);
        }
    }
    dx
}

/// Rotates adjacent pairs of one head vector by position-dependent angles.
pub fn rotary<T: Real>(v: &mut [T], pos: usize, base: f64, inverse: bool) {
    let hd = v.len();
    for i in 0..hd / 2 {
        let theta = pos as f64 * base.powf(-2.0 * i as f64 / hd as f64);
        let (s, c) = theta.sin_cos();
        let (s, c) = (lit::<T>(if inverse { -s } else { s }), lit::<T>(c));
        let (a, b) = (v[2 * i], v[2 * i + 1]);
        v[2 * i] = a * c - b * s;
        v[2 * i + 1] = a * s + b * c;
    }
}

fn rotate_rows<T: Real>(m: &mut [T], dim: usize, heads: usize, start_pos: usize, base: f64, inverse: bool) {
    let hd = dim / heads;
    for (t, row) in m.chunks_exact_mut(dim).enumerate() {
        for head in row.chunks_exact_mut(hd) {
            rotary(head, start_pos + t, base, inverse);
        }
    }
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

#[inline]
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = T::one() / (T::one() + (-x).exp());
    s * (T::one() + x * (T::one() - s))
}

/// Attention projections `(D, D)` each, no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
    pub wo: Vec<T>,
}

/// Geometry shared by the attention kernels.
#[derive(Debug, Clone, Copy)]
pub struct AttentionShape {
    pub dim: usize,
    pub heads: usize,
    pub rope_base: f64,
}

/// Rotated queries and keys plus values for rows starting at `start_pos`.
pub fn project_qkv<T: Real>(
    x: &[T],
    w: &AttentionWeights<T>,
    shape: AttentionShape,
    start_pos: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let d = shape.dim;
    let mut q = linear(x, &w.wq, d, d);
    let mut k = linear(x, &w.wk, d, d);
    let v = linear(x, &w.wv, d, d);
    rotate_rows(&mut q, d, shape.heads, start_pos, shape.rope_base, false);
    rotate_rows(&mut k, d, shape.heads, start_pos, shape.rope_base, false);
    (q, k, v)
}

/// Full causal self-attention over a whole sequence (positions from 0),
/// returning the output and the per-head probability matrices `(H, T, T)`.
pub fn causal_attention<T: Real>(x: &[T], w: &AttentionWeights<T>, shape: AttentionShape) -> (Vec<T>, Vec<T>) {
    let d = shape.dim;
    let t_len = x.len() / d;
    let hd = d / shape.heads;
    let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
    let (q, k, v) = project_qkv(x, w, shape, 0);
    let mut probs = vec![T::zero(); shape.heads * t_len * t_len];
    let mut ctx = vec![T::zero(); t_len * d];
    for h in 0..shape.heads {
        let off = h * hd;
        for t in 0..t_len {
            let row = &mut probs[(h * t_len + t) * t_len..][..t_len];
            for s in 0..t_len {
                row[s] = if s <= t {
                    let qs = &q[t * d + off..t * d + off + hd];
                    let ks = &k[s * d + off..s * d + off + hd];
                    qs.iter().zip(ks).map(|(&a, &b)| a * b).sum::<T>() * scale
                } else {
                    T::neg_infinity()
                };
            }
            softmax_in_place(row);
            for s in 0..=t {
                let p = row[s];
                for i in 0..hd {
                    ctx[t * d + off + i] = ctx[t * d + off + i] + p * v[s * d + off + i];
                }
            }
        }
    }
    (linear(&ctx, &w.wo, d, d), probs)
}

/// Backward of [`causal_attention`]; accumulates into `grad`, returns `dx`.
pub fn causal_attention_backward<T: Real>(
    x: &[T],
    w: &AttentionWeights<T>,
    shape: AttentionShape,
    dy: &[T],
    grad: &mut AttentionWeights<T>,
) -> Vec<T> {
    let d = shape.dim;
    let t_len = x.len() / d;
    let hd = d / shape.heads;
    let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
    let (q, k, v) = project_qkv(x, w, shape, 0);
    let (_, probs) = causal_attention(x, w, shape);
    // recompute the context rows
    let mut ctx = vec![T::zero(); t_len * d];
    for h in 0..shape.heads {
        let off = h * hd;
        for t in 0..t_len {
            for s in 0..=t {
                let p = probs[(h * t_len + t) * t_len + s];
                for i in 0..hd {
                    ctx[t * d + off + i] = ctx[t * d + off + i] + p * v[s * d + off + i];
                }
            }
        }
    }
    let d_ctx = linear_backward(&ctx, &w.wo, dy, d, d, &mut grad.wo);
    let mut dq = vec![T::zero(); t_len * d];
    let mut dk = vec![T::zero(); t_len * d];
    let mut dv = vec![T::zero(); t_len * d];
    for h in 0..shape.heads {
        let off = h * hd;
        for t in 0..t_len {
            let p_row = &probs[(h * t_len + t) * t_len..][..t_len];
            let dc = &d_ctx[t * d + off..t * d + off + hd];
            let mut dp = vec![T::zero(); t + 1];
            for s in 0..=t {
                let vs = &v[s * d + off..s * d + off + hd];
                dp[s] = dc.iter().zip(vs).map(|(&a, &b)| a * b).sum();
                for i in 0..hd {
                    dv[s * d + off + i] = dv[s * d + off + i] + p_row[s] * dc[i];
                }
            }
            let dot: T = (0..=t).map(|s| p_row[s] * dp[s]).sum();
            for s in 0..=t {
                let ds = p_row[s] * (dp[s] - dot) * scale;
                for i in 0..hd {
                    dq[t * d + off + i] = dq[t * d + off + i] + ds * k[s * d + off + i];
                    dk[s * d + off + i] = dk[s * d + off + i] + ds * q[t * d + off + i];
                }
            }
        }
    }
    rotate_rows(&mut dq, d, shape.heads, 0, shape.rope_base, true);
    rotate_rows(&mut dk, d, shape.heads, 0, shape.rope_base, true);
    let dxq = linear_backward(x, &w.wq, &dq, d, d, &mut grad.wq);
    let dxk = linear_backward(x, &w.wk, &dk, d, d, &mut grad.wk);
    let dxv = linear_backward(x, &w.wv, &dv, d, d, &mut grad.wv);
    dxq.iter().zip(&dxk).zip(&dxv).map(|((&a, &b), &c)| a + b + c).collect()
}

/// Gathers embedding rows.
pub fn embed<T: Real>(table: &[T], rows: &[usize], dim: usize) -> Vec<T> {
    rows.iter()
        .flat_map(|&r| table[r * dim..(r + 1) * dim].iter().copied())
        .collect()
}

/// Scatter-adds row gradients back into the table gradient.
pub fn embed_backward<T: Real>(rows: &[usize], dy: &[T], dim: usize, dtable: &mut [T]) {
    for (t, &r) in rows.iter().enumerate() {
        for i in 0..dim {
            dtable[r * dim + i] = dtable[r * dim + i] + dy[t * dim + i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = 16;
        let x: Vec<f64> = (0..d * 8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let y = layer_norm(&x, &vec![1.0; d], &vec![0.0; d], 1e-6);
        for row in y.chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn rotary_is_orthogonal() {
        let mut v = vec![0.3f64, -1.2, 0.7, 2.0];
        let orig = v.clone();
        rotary(&mut v, 5, 10_000.0, false);
        let n0: f64 = orig.iter().map(|a| a * a).sum();
        let n1: f64 = v.iter().map(|a| a * a).sum();
        assert!((n0 - n1).abs() < 1e-12);
        rotary(&mut v, 5, 10_000.0, true);
        for (a, b) in v.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (d, t) = (8, 6);
        let mut r = || (0..d * d).map(|_| rng.gen_range(-0.5f32..0.5)).collect::<Vec<_>>();
        let w = AttentionWeights {
            wq: r(),
            wk: r(),
            wv: r(),
            wo: r(),
        };
        let x: Vec<f32> = (0..t * d).map(|i| ((i * 7) as f32 * 0.13).sin()).collect();
        let (_, probs) = causal_attention(
            &x,
            &w,
            AttentionShape {
                dim: d,
                heads: 2,
                rope_base: 10_000.0,
            },
        );
        for (i, row) in probs.chunks(t).enumerate() {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6);
            let pos = i % t;
            assert!(row[pos + 1..].iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn softmax_handles_masked_entries() {
        let mut row = vec![0.0f64, f64::NEG_INFINITY, 0.0];
        softmax_in_place(&mut row);
        assert_eq!(row, vec![0.5, 0.0, 0.5]);
    }
}
