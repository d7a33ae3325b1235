//! Transformer language model whose virtual layers resolve their weights
//! through a [`LayerMap`] into a bank of shared slots.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var, LAYERNORM_EPS};
use crate::error::{Error, Result};
use crate::maps::LayerMap;
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// Standard deviation of the projection/embedding initialiser.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormPlacement {
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Target depth.
    pub depth: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_ratio: usize,
    pub vocab_size: usize,
    /// Context length, also the number of positional embeddings.
    pub seq_len: usize,
    pub norm_placement: NormPlacement,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.depth == 0 {
            return fail("depth must be at least 1".into());
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.ffn_ratio == 0 {
            return fail("ffn_ratio must be at least 1".into());
        }
        if self.vocab_size == 0 || self.seq_len == 0 {
            return fail("vocab_size and seq_len must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.d_model * self.ffn_ratio
    }
}

/// A trainable tensor with its AdamW moments and latest gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let n = value.numel();
        Self {
            value,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            grad: None,
        }
    }

    fn normal(shape: &[usize], rng: &mut CounterRng) -> Self {
        let dist = Normal::new(0.0, INIT_STD).expect("finite std");
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = dist.sample(rng.inner_mut());
        }
        Self::new(t)
    }

    fn zeros(shape: &[usize]) -> Self {
        Self::new(Tensor::zeros(shape))
    }

    fn ones(shape: &[usize]) -> Self {
        Self::new(Tensor::filled(shape, 1.0))
    }
}

/// Per-head slices of the attention projections.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub query: Param,
    pub query_bias: Param,
    pub key: Param,
    pub key_bias: Param,
    pub value: Param,
    pub value_bias: Param,
    /// `d_k × d` slice of the output projection.
    pub output: Param,
}

/// All weights of one transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub heads: Vec<HeadWeights>,
    pub attn_out_bias: Param,
    pub attn_norm_gain: Param,
    pub attn_norm_bias: Param,
    pub ffn_norm_gain: Param,
    pub ffn_norm_bias: Param,
    pub ffn_in: Param,
    pub ffn_in_bias: Param,
    pub ffn_out: Param,
    pub ffn_out_bias: Param,
}

impl LayerWeights {
    fn init(config: &ModelConfig, rng: &mut CounterRng) -> Self {
        let (d, dk, f) = (config.d_model, config.head_dim(), config.ffn_dim());
        let heads = (0..config.n_heads)
            .map(|_| HeadWeights {
                query: Param::normal(&[d, dk], rng),
                query_bias: Param::zeros(&[dk]),
                key: Param::normal(&[d, dk], rng),
                key_bias: Param::zeros(&[dk]),
                value: Param::normal(&[d, dk], rng),
                value_bias: Param::zeros(&[dk]),
                output: Param::normal(&[dk, d], rng),
            })
            .collect();
        Self {
            heads,
            attn_out_bias: Param::zeros(&[d]),
            attn_norm_gain: Param::ones(&[d]),
            attn_norm_bias: Param::zeros(&[d]),
            ffn_norm_gain: Param::ones(&[d]),
            ffn_norm_bias: Param::zeros(&[d]),
            ffn_in: Param::normal(&[d, f], rng),
            ffn_in_bias: Param::zeros(&[f]),
            ffn_out: Param::normal(&[f, d], rng),
            ffn_out_bias: Param::zeros(&[d]),
        }
    }

    /// Parameters with stable names, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (h, head) in self.heads.iter().enumerate() {
            out.push((format!("attn.h{h}.query"), &head.query));
            out.push((format!("attn.h{h}.query_bias"), &head.query_bias));
            out.push((format!("attn.h{h}.key"), &head.key));
            out.push((format!("attn.h{h}.key_bias"), &head.key_bias));
            out.push((format!("attn.h{h}.value"), &head.value));
            out.push((format!("attn.h{h}.value_bias"), &head.value_bias));
            out.push((format!("attn.h{h}.output"), &head.output));
        }
        out.push(("attn.out_bias".into(), &self.attn_out_bias));
        out.push(("attn_norm.gain".into(), &self.attn_norm_gain));
        out.push(("attn_norm.bias".into(), &self.attn_norm_bias));
        out.push(("ffn_norm.gain".into(), &self.ffn_norm_gain));
        out.push(("ffn_norm.bias".into(), &self.ffn_norm_bias));
        out.push(("ffn.in".into(), &self.ffn_in));
        out.push(("ffn.in_bias".into(), &self.ffn_in_bias));
        out.push(("ffn.out".into(), &self.ffn_out));
        out.push(("ffn.out_bias".into(), &self.ffn_out_bias));
        out
    }

    /// Same order as [`LayerWeights::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for head in &mut self.heads {
            out.push(&mut head.query);
            out.push(&mut head.query_bias);
            out.push(&mut head.key);
            out.push(&mut head.key_bias);
            out.push(&mut head.value);
            out.push(&mut head.value_bias);
            out.push(&mut head.output);
        }
        out.push(&mut self.attn_out_bias);
        out.push(&mut self.attn_norm_gain);
        out.push(&mut self.attn_norm_bias);
        out.push(&mut self.ffn_norm_gain);
        out.push(&mut self.ffn_norm_bias);
        out.push(&mut self.ffn_in);
        out.push(&mut self.ffn_in_bias);
        out.push(&mut self.ffn_out);
        out.push(&mut self.ffn_out_bias);
        out
    }

    fn bind(&self, tape: &mut Tape) -> LayerVars {
        let heads = self
            .heads
            .iter()
            .map(|h| HeadVars {
                query: tape.leaf(h.query.value.clone()),
                query_bias: tape.leaf(h.query_bias.value.clone()),
                key: tape.leaf(h.key.value.clone()),
                key_bias: tape.leaf(h.key_bias.value.clone()),
                value: tape.leaf(h.value.value.clone()),
                value_bias: tape.leaf(h.value_bias.value.clone()),
                output: tape.leaf(h.output.value.clone()),
            })
            .collect();
        LayerVars {
            heads,
            attn_out_bias: tape.leaf(self.attn_out_bias.value.clone()),
            attn_norm_gain: tape.leaf(self.attn_norm_gain.value.clone()),
            attn_norm_bias: tape.leaf(self.attn_norm_bias.value.clone()),
            ffn_norm_gain: tape.leaf(self.ffn_norm_gain.value.clone()),
            ffn_norm_bias: tape.leaf(self.ffn_norm_bias.value.clone()),
            ffn_in: tape.leaf(self.ffn_in.value.clone()),
            ffn_in_bias: tape.leaf(self.ffn_in_bias.value.clone()),
            ffn_out: tape.leaf(self.ffn_out.value.clone()),
            ffn_out_bias: tape.leaf(self.ffn_out_bias.value.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadVars {
    pub query: Var,
    pub query_bias: Var,
    pub key: Var,
    pub key_bias: Var,
    pub value: Var,
    pub value_bias: Var,
    pub output: Var,
}

/// Tape handles for one slot's weights.
#[derive(Debug, Clone)]
pub struct LayerVars {
    pub heads: Vec<HeadVars>,
    pub attn_out_bias: Var,
    pub attn_norm_gain: Var,
    pub attn_norm_bias: Var,
    pub ffn_norm_gain: Var,
    pub ffn_norm_bias: Var,
    pub ffn_in: Var,
    pub ffn_in_bias: Var,
    pub ffn_out: Var,
    pub ffn_out_bias: Var,
}

impl LayerVars {
    /// Same order as [`LayerWeights::named_params`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for h in &self.heads {
            out.extend([
                h.query,
                h.query_bias,
                h.key,
                h.key_bias,
                h.value,
                h.value_bias,
                h.output,
            ]);
        }
        out.extend([
            self.attn_out_bias,
            self.attn_norm_gain,
            self.attn_norm_bias,
            self.ffn_norm_gain,
            self.ffn_norm_bias,
            self.ffn_in,
            self.ffn_in_bias,
            self.ffn_out,
            self.ffn_out_bias,
        ]);
        out
    }
}

/// Tape handles for every bank parameter, one leaf per parameter no matter
/// how many virtual layers use it.
#[derive(Debug, Clone)]
pub struct BankVars {
    pub token_embedding: Var,
    pub position_embedding: Var,
    pub final_norm_gain: Var,
    pub final_norm_bias: Var,
    pub slots: Vec<LayerVars>,
}

impl BankVars {
    /// Same order as [`WeightBank::named_params`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![
            self.token_embedding,
            self.position_embedding,
            self.final_norm_gain,
            self.final_norm_bias,
        ];
        for s in &self.slots {
            out.extend(s.vars());
        }
        out
    }
}

/// Tokens of shape `batch × seq` with next-token targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub batch: usize,
    pub seq: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<Option<usize>>,
}

impl TokenBatch {
    pub fn new(batch: usize, seq: usize, inputs: Vec<usize>, targets: Vec<Option<usize>>) -> Result<Self> {
        if inputs.len() != batch * seq || targets.len() != batch * seq {
            return Err(Error::Shape {
                op: "token_batch",
                lhs: vec![batch, seq],
                rhs: vec![inputs.len(), targets.len()],
            });
        }
        Ok(Self {
            batch,
            seq,
            inputs,
            targets,
        })
    }

    /// Each window holds `seq + 1` tokens: inputs are the first `seq`,
    /// targets the last `seq`.
    pub fn from_windows<W: AsRef<[usize]>>(windows: &[W]) -> Result<Self> {
        let first = windows.first().ok_or(Error::Empty("batch"))?.as_ref().len();
        if first < 2 {
            return Err(Error::Empty("window shorter than two tokens"));
        }
        let seq = first - 1;
        let mut inputs = Vec::with_capacity(windows.len() * seq);
        let mut targets = Vec::with_capacity(windows.len() * seq);
        for w in windows {
            let w = w.as_ref();
            if w.len() != first {
                return Err(Error::Shape {
                    op: "token_batch",
                    lhs: vec![first],
                    rhs: vec![w.len()],
                });
            }
            inputs.extend_from_slice(&w[..seq]);
            targets.extend(w[1..].iter().map(|&t| Some(t)));
        }
        Self::new(windows.len(), seq, inputs, targets)
    }

    pub fn tokens(&self) -> usize {
        self.batch * self.seq
    }
}

/// Handles produced by [`WeightBank::forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `batch × seq × vocab`.
    pub logits: Var,
    /// Output of the last executed block, `(batch·seq) × d`.
    pub final_hidden: Var,
    pub vars: BankVars,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Equal-width bins over the observed range; a constant input lands
    /// entirely in the first bin.
    pub fn from_values(values: &[f64], n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::Config(format!("histogram needs at least 2 bins, got {n_bins}")));
        }
        if values.is_empty() {
            return Err(Error::Empty("activations"));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0u64; n_bins];
        let width = (max - min) / n_bins as f64;
        for &v in values {
            let bin = if width > 0.0 {
                (((v - min) / width) as usize).min(n_bins - 1)
            } else {
                0
            };
            counts[bin] += 1;
        }
        Ok(Self { min, max, counts })
    }
}

/// The trainable state: `N` block slots plus embeddings and final norm.
/// The output head is tied to the token embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBank {
    config: ModelConfig,
    pub slots: Vec<LayerWeights>,
    pub token_embedding: Param,
    pub position_embedding: Param,
    pub final_norm_gain: Param,
    pub final_norm_bias: Param,
    /// Number of optimizer updates applied so far.
    pub step: u64,
}

impl WeightBank {
    /// Fresh bank with `n_slots` block slots, deterministic in `seed`.
    pub fn init(config: &ModelConfig, n_slots: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_slots == 0 || n_slots > config.depth {
            return Err(Error::SlotCount {
                n_slots,
                depth: config.depth,
            });
        }
        let mut rng = CounterRng::from_seed(seed);
        let d = config.d_model;
        let token_embedding = Param::normal(&[config.vocab_size, d], &mut rng);
        let position_embedding = Param::normal(&[config.seq_len, d], &mut rng);
        let slots = (0..n_slots).map(|_| LayerWeights::init(config, &mut rng)).collect();
        Ok(Self {
            config: config.clone(),
            slots,
            token_embedding,
            position_embedding,
            final_norm_gain: Param::ones(&[d]),
            final_norm_bias: Param::zeros(&[d]),
            step: 0,
        })
    }

    /// Assembles a bank from parts, checking every shape against `config`.
    pub fn from_parts(
        config: ModelConfig,
        slots: Vec<LayerWeights>,
        token_embedding: Param,
        position_embedding: Param,
        final_norm: (Param, Param),
        step: u64,
    ) -> Result<Self> {
        let template = Self::init(&config, slots.len().max(1).min(config.depth), 0)?;
        let bank = Self {
            config,
            slots,
            token_embedding,
            position_embedding,
            final_norm_gain: final_norm.0,
            final_norm_bias: final_norm.1,
            step,
        };
        if bank.slots.len() != template.slots.len() {
            return Err(Error::SlotCount {
                n_slots: bank.slots.len(),
                depth: bank.config.depth,
            });
        }
        for ((_, p), (_, q)) in bank.named_params().iter().zip(template.named_params()) {
            if p.value.shape() != q.value.shape()
                || p.first_moment.len() != p.value.numel()
                || p.second_moment.len() != p.value.numel()
            {
                return Err(Error::Shape {
                    op: "bank",
                    lhs: p.value.shape().to_vec(),
                    rhs: q.value.shape().to_vec(),
                });
            }
        }
        Ok(bank)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    /// All parameters with stable names, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = vec![
            (String::from("embed.token"), &self.token_embedding),
            (String::from("embed.position"), &self.position_embedding),
            (String::from("final_norm.gain"), &self.final_norm_gain),
            (String::from("final_norm.bias"), &self.final_norm_bias),
        ];
        for (i, slot) in self.slots.iter().enumerate() {
            for (name, p) in slot.named_params() {
                out.push((format!("slot{}.{name}", i + 1), p));
            }
        }
        out
    }

    /// Same order as [`WeightBank::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![
            &mut self.token_embedding,
            &mut self.position_embedding,
            &mut self.final_norm_gain,
            &mut self.final_norm_bias,
        ];
        for slot in &mut self.slots {
            out.extend(slot.params_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.numel()).sum()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BankVars {
        BankVars {
            token_embedding: tape.leaf(self.token_embedding.value.clone()),
            position_embedding: tape.leaf(self.position_embedding.value.clone()),
            final_norm_gain: tape.leaf(self.final_norm_gain.value.clone()),
            final_norm_bias: tape.leaf(self.final_norm_bias.value.clone()),
            slots: self.slots.iter().map(|s| s.bind(tape)).collect(),
        }
    }

    /// Embeds `batch`, runs one block per map entry using the mapped slot,
    /// then the final norm and the tied output head.
    pub fn forward(&self, tape: &mut Tape, map: &LayerMap, batch: &TokenBatch) -> Result<ForwardPass> {
        for (layer, &entry) in map.entries().iter().enumerate() {
            if entry == 0 || entry > self.n_slots() {
                return Err(Error::MapEntry {
                    layer: layer + 1,
                    entry,
                    n_slots: self.n_slots(),
                });
            }
        }
        if batch.seq > self.config.seq_len {
            return Err(Error::SequenceTooLong {
                len: batch.seq,
                max: self.config.seq_len,
            });
        }
        if batch.batch == 0 || batch.seq == 0 {
            return Err(Error::Empty("batch"));
        }
        let vars = self.bind(tape);
        let tok = tape.gather(vars.token_embedding, &batch.inputs)?;
        let positions: Vec<usize> = (0..batch.batch).flat_map(|_| 0..batch.seq).collect();
        let pos = tape.gather(vars.position_embedding, &positions)?;
        let mut x = tape.add(tok, pos)?;
        for &entry in map.entries() {
            x = block_forward(tape, &self.config, &vars.slots[entry - 1], x, batch.batch, batch.seq)?;
        }
        let final_hidden = x;
        let h = tape.layernorm(x, vars.final_norm_gain, vars.final_norm_bias, LAYERNORM_EPS)?;
        let logits = tape.matmul_nt(h, vars.token_embedding)?;
        let logits = tape.reshape(logits, &[batch.batch, batch.seq, self.config.vocab_size])?;
        Ok(ForwardPass {
            logits,
            final_hidden,
            vars,
        })
    }

    /// Mean next-token loss on `batch`, without touching gradients.
    pub fn evaluate(&self, map: &LayerMap, batch: &TokenBatch) -> Result<f64> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, map, batch)?;
        let loss = tape.cross_entropy(pass.logits, &batch.targets)?;
        Ok(tape.value(loss).item())
    }

    /// Forward, loss and backward; stores each parameter's gradient and
    /// returns the loss.
    pub fn compute_gradients(&mut self, map: &LayerMap, batch: &TokenBatch) -> Result<f64> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, map, batch)?;
        let loss = tape.cross_entropy(pass.logits, &batch.targets)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        for (param, var) in self.params_mut().into_iter().zip(pass.vars.vars()) {
            param.grad = Some(grads.wrt(&tape, var).into_data());
        }
        Ok(value)
    }

    pub fn zero_gradients(&mut self) {
        for p in self.params_mut() {
            p.grad = Some(vec![0.0; p.value.numel()]);
        }
    }

    pub fn clear_gradients(&mut self) {
        for p in self.params_mut() {
            p.grad = None;
        }
    }

    /// Mean and population standard deviation of `|g|` over every
    /// trainable scalar.
    pub fn grad_stats(&self) -> Result<GradStats> {
        let mut count = 0usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for (_, p) in self.named_params() {
            let g = p.grad.as_ref().ok_or(Error::NoGradients)?;
            for v in g {
                let a = v.abs();
                sum += a;
                sum_sq += a * a;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = (sum_sq / count as f64 - mean * mean).max(0.0);
        Ok(GradStats {
            mean,
            std: libm::sqrt(var),
        })
    }

    /// Histogram over every scalar of the last executed block's output.
    pub fn activation_histogram(&self, map: &LayerMap, batch: &TokenBatch, n_bins: usize) -> Result<Histogram> {
        if n_bins < 2 {
            return Err(Error::Config(format!("histogram needs at least 2 bins, got {n_bins}")));
        }
        if batch.batch == 0 || batch.seq == 0 {
            return Err(Error::Empty("batch"));
        }
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, map, batch)?;
        Histogram::from_values(tape.value(pass.final_hidden).data(), n_bins)
    }
}

/// Multi-head self-attention as a sum over heads, each projected by its own
/// slice of the output matrix.
pub fn attention_forward(
    tape: &mut Tape,
    config: &ModelConfig,
    w: &LayerVars,
    x: Var,
    batch: usize,
    seq: usize,
) -> Result<Var> {
    let scale = 1.0 / libm::sqrt(config.head_dim() as f64);
    let mut total: Option<Var> = None;
    for head in &w.heads {
        let q = tape.matmul(x, head.query)?;
        let q = tape.add_row(q, head.query_bias)?;
        let k = tape.matmul(x, head.key)?;
        let k = tape.add_row(k, head.key_bias)?;
        let v = tape.matmul(x, head.value)?;
        let v = tape.add_row(v, head.value_bias)?;
        let scores = tape.batched_matmul_nt(q, k, batch)?;
        let scores = tape.scale(scores, scale);
        let scores = tape.causal_mask(scores, seq)?;
        let probs = tape.softmax_row(scores)?;
        let mixed = tape.batched_matmul(probs, v, batch)?;
        let out = tape.matmul(mixed, head.output)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, out)?,
            None => out,
        });
    }
    let total = total.ok_or(Error::Config("no attention heads".into()))?;
    tape.add_row(total, w.attn_out_bias)
}

pub fn ffn_forward(tape: &mut Tape, w: &LayerVars, x: Var) -> Result<Var> {
    let h = tape.matmul(x, w.ffn_in)?;
    let h = tape.add_row(h, w.ffn_in_bias)?;
    let h = tape.gelu(h);
    let h = tape.matmul(h, w.ffn_out)?;
    tape.add_row(h, w.ffn_out_bias)
}

/// One transformer block on `x: (batch·seq) × d`.
pub fn block_forward(
    tape: &mut Tape,
    config: &ModelConfig,
    w: &LayerVars,
    x: Var,
    batch: usize,
    seq: usize,
) -> Result<Var> {
    match config.norm_placement {
        NormPlacement::Pre => {
            let h = tape.layernorm(x, w.attn_norm_gain, w.attn_norm_bias, LAYERNORM_EPS)?;
            let a = attention_forward(tape, config, w, h, batch, seq)?;
            let x = tape.add(x, a)?;
            let h = tape.layernorm(x, w.ffn_norm_gain, w.ffn_norm_bias, LAYERNORM_EPS)?;
            let f = ffn_forward(tape, w, h)?;
            tape.add(x, f)
        }
        NormPlacement::Post => {
            let a = attention_forward(tape, config, w, x, batch, seq)?;
            let x = tape.add(x, a)?;
            let x = tape.layernorm(x, w.attn_norm_gain, w.attn_norm_bias, LAYERNORM_EPS)?;
            let f = ffn_forward(tape, w, x)?;
            let x = tape.add(x, f)?;
            tape.layernorm(x, w.ffn_norm_gain, w.ffn_norm_bias, LAYERNORM_EPS)
        }
    }
}
