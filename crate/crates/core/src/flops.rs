//! Analytic training-FLOPs accounting and FLOPs-to-quality savings.
//!
//! Forward FLOPs per token:
//!
//! ```text
//! block     = 2·(4d² + 2αd²) + 4·T·d
//! embedding = 2·d·V
//! forward   = depth·block + embedding
//! ```
//!
//! A training step costs forward plus a backward of twice the forward.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::sampler::DepthPmf;

pub const BACKWARD_MULTIPLIER: u64 = 2;

pub fn block_flops_per_token(config: &ModelConfig) -> u64 {
    let d = config.d_model as u64;
    let alpha = config.ffn_ratio as u64;
    let t = config.seq_len as u64;
    2 * (4 * d * d + 2 * alpha * d * d) + 4 * t * d
}

pub fn embedding_flops_per_token(config: &ModelConfig) -> u64 {
    2 * config.d_model as u64 * config.vocab_size as u64
}

pub fn forward_flops_per_token(config: &ModelConfig, depth: usize) -> u64 {
    depth as u64 * block_flops_per_token(config) + embedding_flops_per_token(config)
}

/// Training FLOPs of one step at `depth` over `batch_tokens` tokens.
pub fn step_flops(config: &ModelConfig, depth: usize, batch_tokens: usize) -> u64 {
    (1 + BACKWARD_MULTIPLIER) * forward_flops_per_token(config, depth) * batch_tokens as u64
}

/// `Σ_d pmf(d)·step_flops(d)`.
pub fn expected_step_flops(config: &ModelConfig, pmf: &DepthPmf, batch_tokens: usize) -> f64 {
    pmf.iter()
        .map(|(d, p)| p * step_flops(config, d, batch_tokens) as f64)
        .sum()
}

/// Validation loss against cumulative training FLOPs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    points: Vec<(f64, f64)>,
}

impl LossCurve {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<(f64, f64)>) -> Result<Self> {
        let mut curve = Self::new();
        for (f, l) in points {
            curve.push(f, l)?;
        }
        Ok(curve)
    }

    /// Appends a point; FLOPs must strictly increase.
    pub fn push(&mut self, flops: f64, loss: f64) -> Result<()> {
        if let Some(&(last, _)) = self.points.last() {
            if !(flops > last) {
                return Err(Error::Config(alloc::format!(
                    "loss curve FLOPs must increase: {flops} after {last}"
                )));
            }
        }
        self.points.push((flops, loss));
        Ok(())
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    pub fn total_flops(&self) -> Option<f64> {
        self.points.last().map(|p| p.0)
    }

    /// First FLOPs at which the curve reaches `target`, interpolating
    /// linearly between the straddling points.
    pub fn flops_to_reach(&self, target: f64) -> Option<f64> {
        let mut prev: Option<(f64, f64)> = None;
        for &(f, l) in &self.points {
            if l <= target {
                return Some(match prev {
                    Some((f0, l0)) if l0 > l => f0 + (l0 - target) / (l0 - l) * (f - f0),
                    _ => f,
                });
            }
            prev = Some((f, l));
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Saving {
    Reached(f64),
    NotReached,
}

impl Saving {
    pub fn value(self) -> Option<f64> {
        match self {
            Self::Reached(v) => Some(v),
            Self::NotReached => None,
        }
    }
}

/// `1 − F_c/F_b`, where `F_c` is the candidate's FLOPs to reach the
/// baseline's final loss and `F_b` the baseline's total FLOPs.
pub fn saving_ratio(candidate: &LossCurve, baseline: &LossCurve) -> Result<Saving> {
    let (Some(target), Some(total)) = (baseline.final_loss(), baseline.total_flops()) else {
        return Err(Error::Empty("baseline curve"));
    };
    if candidate.is_empty() {
        return Err(Error::Empty("candidate curve"));
    }
    if !(total > 0.0) {
        return Err(Error::Config(alloc::format!("baseline total FLOPs must be positive, got {total}")));
    }
    Ok(match candidate.flops_to_reach(target) {
        Some(f) => Saving::Reached(1.0 - f / total),
        None => Saving::NotReached,
    })
}
