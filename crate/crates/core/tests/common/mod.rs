//! Shared fixtures and a loop-based reference transformer used as an
//! oracle for the tape implementation.

#![allow(dead_code)]

use apollo_core::model::{LayerWeights, Param};
use apollo_core::{CounterRng, ModelConfig, NormPlacement, TokenBatch, WeightBank};

pub const EPS: f64 = 1e-5;

pub fn config(d: usize, heads: usize, depth: usize, vocab: usize, seq: usize) -> ModelConfig {
    ModelConfig {
        depth,
        d_model: d,
        n_heads: heads,
        ffn_ratio: 4,
        vocab_size: vocab,
        seq_len: seq,
        norm_placement: NormPlacement::Pre,
    }
}

pub fn random_batch(batch: usize, seq: usize, vocab: usize, seed: u64) -> TokenBatch {
    let mut rng = CounterRng::from_seed(seed);
    let windows: Vec<Vec<usize>> = (0..batch)
        .map(|_| (0..=seq).map(|_| rng.next_below(vocab)).collect())
        .collect();
    TokenBatch::from_windows(&windows).unwrap()
}

/// Moves every parameter away from its structured init (unit gains, zero
/// biases) so identities are exercised on generic weights.
pub fn perturb(bank: &mut WeightBank, seed: u64, scale: f64) {
    let mut rng = CounterRng::from_seed(seed);
    for p in bank.params_mut() {
        for v in p.value.data_mut() {
            *v += scale * (2.0 * rng.next_unit() - 1.0);
        }
    }
}

pub fn randn(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = CounterRng::from_seed(seed);
    (0..n)
        .map(|_| {
            let (u1, u2) = (rng.next_unit().max(1e-300), rng.next_unit());
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

fn vals(p: &Param) -> &[f64] {
    p.value.data()
}

/// out = a[m×k] · b[k×n], accumulated in k order.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            for j in 0..n {
                out[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    out
}

fn add_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn layernorm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let d = gain.len();
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(d).zip(out.chunks_mut(d)) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + EPS).sqrt();
        for c in 0..d {
            o[c] = (row[c] - mean) * s * gain[c] + bias[c];
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    x * (0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)))
}

/// Attention for one head over only the visible prefix of each sequence
/// (no masking trick), returning `(batch·seq) × d_k`.
fn head_attention(q: &[f64], k: &[f64], v: &[f64], batch: usize, seq: usize, dk: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * seq * dk];
    let scale = 1.0 / (dk as f64).sqrt();
    for b in 0..batch {
        for i in 0..seq {
            let qi = &q[(b * seq + i) * dk..(b * seq + i + 1) * dk];
            let scores: Vec<f64> = (0..=i)
                .map(|j| {
                    let kj = &k[(b * seq + j) * dk..(b * seq + j + 1) * dk];
                    qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale
                })
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let o = &mut out[(b * seq + i) * dk..(b * seq + i + 1) * dk];
            for (j, e) in exps.iter().enumerate() {
                let vj = &v[(b * seq + j) * dk..(b * seq + j + 1) * dk];
                for c in 0..dk {
                    o[c] += e / z * vj[c];
                }
            }
        }
    }
    out
}

/// Multi-head attention; `concat` joins head outputs and applies the full
/// output matrix instead of summing per-head projections.
pub fn attention(
    cfg: &ModelConfig,
    w: &LayerWeights,
    x: &[f64],
    batch: usize,
    seq: usize,
    concat: bool,
) -> Vec<f64> {
    let (d, dk) = (cfg.d_model, cfg.head_dim());
    let rows = batch * seq;
    let heads: Vec<Vec<f64>> = w
        .heads
        .iter()
        .map(|h| {
            let mut q = matmul(x, vals(&h.query), rows, d, dk);
            add_bias(&mut q, vals(&h.query_bias));
            let mut k = matmul(x, vals(&h.key), rows, d, dk);
            add_bias(&mut k, vals(&h.key_bias));
            let mut v = matmul(x, vals(&h.value), rows, d, dk);
            add_bias(&mut v, vals(&h.value_bias));
            head_attention(&q, &k, &v, batch, seq, dk)
        })
        .collect();
    let mut out = if concat {
        let m = heads.len();
        let mut joined = vec![0.0; rows * d];
        for (hi, h) in heads.iter().enumerate() {
            for r in 0..rows {
                joined[r * d + hi * dk..r * d + (hi + 1) * dk].copy_from_slice(&h[r * dk..(r + 1) * dk]);
            }
        }
        let w_o: Vec<f64> = w.heads.iter().flat_map(|h| vals(&h.output).to_vec()).collect();
        assert_eq!(w_o.len(), m * dk * d);
        matmul(&joined, &w_o, rows, d, d)
    } else {
        let mut total = vec![0.0; rows * d];
        for (h, o) in w.heads.iter().zip(&heads) {
            let p = matmul(o, vals(&h.output), rows, dk, d);
            total = add(&total, &p);
        }
        total
    };
    add_bias(&mut out, vals(&w.attn_out_bias));
    out
}

fn ffn(cfg: &ModelConfig, w: &LayerWeights, x: &[f64], rows: usize) -> Vec<f64> {
    let (d, f) = (cfg.d_model, cfg.ffn_dim());
    let mut h = matmul(x, vals(&w.ffn_in), rows, d, f);
    add_bias(&mut h, vals(&w.ffn_in_bias));
    h.iter_mut().for_each(|v| *v = gelu(*v));
    let mut o = matmul(&h, vals(&w.ffn_out), rows, f, d);
    add_bias(&mut o, vals(&w.ffn_out_bias));
    o
}

pub fn block(cfg: &ModelConfig, w: &LayerWeights, x: &[f64], batch: usize, seq: usize, concat: bool) -> Vec<f64> {
    let rows = batch * seq;
    match cfg.norm_placement {
        NormPlacement::Pre => {
            let h = layernorm(x, vals(&w.attn_norm_gain), vals(&w.attn_norm_bias));
            let x = add(x, &attention(cfg, w, &h, batch, seq, concat));
            let h = layernorm(&x, vals(&w.ffn_norm_gain), vals(&w.ffn_norm_bias));
            add(&x, &ffn(cfg, w, &h, rows))
        }
        NormPlacement::Post => {
            let x = add(x, &attention(cfg, w, x, batch, seq, concat));
            let x = layernorm(&x, vals(&w.attn_norm_gain), vals(&w.attn_norm_bias));
            let x = add(&x, &ffn(cfg, w, &x, rows));
            layernorm(&x, vals(&w.ffn_norm_gain), vals(&w.ffn_norm_bias))
        }
    }
}

/// Plain transformer over an explicit list of layer weights:
/// returns `(logits, last block output)`.
pub fn reference_forward(bank: &WeightBank, layers: &[&LayerWeights], batch: &TokenBatch) -> (Vec<f64>, Vec<f64>) {
    let cfg = bank.config();
    let d = cfg.d_model;
    let mut x = Vec::with_capacity(batch.tokens() * d);
    for (i, &tok) in batch.inputs.iter().enumerate() {
        let pos = i % batch.seq;
        let e = &vals(&bank.token_embedding)[tok * d..(tok + 1) * d];
        let p = &vals(&bank.position_embedding)[pos * d..(pos + 1) * d];
        x.extend(e.iter().zip(p).map(|(a, b)| a + b));
    }
    for w in layers {
        x = block(cfg, w, &x, batch.batch, batch.seq, false);
    }
    let h = layernorm(&x, vals(&bank.final_norm_gain), vals(&bank.final_norm_bias));
    let emb = vals(&bank.token_embedding);
    let v = cfg.vocab_size;
    let mut logits = vec![0.0; batch.tokens() * v];
    for r in 0..batch.tokens() {
        for t in 0..v {
            logits[r * v + t] = h[r * d..(r + 1) * d]
                .iter()
                .zip(&emb[t * d..(t + 1) * d])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    (logits, x)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
