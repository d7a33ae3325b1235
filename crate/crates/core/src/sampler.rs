//! Depth-sampling distributions over integer depths `N..=L`.
//!
//! Each kind is defined by a continuous density on `[N, L]`; the discrete
//! pmf evaluates that density at every integer depth and renormalises.
//!
//! | kind | density |
//! |------|---------|
//! | LVPS | `b / (x + k)^2`, `b = (N+k)(L+k)/(L-N)`, `c = (L+k)/(L-N)` |
//! | ES   | `(1/k)·(1/(x - N + b) + 1/(L + b - x))`, `b = (L-N)/(e^{k/2} - 1)` |
//! | US   | `1 / (L - N)` |
//! | FS   | point mass at `L` |
//!
//! `NoSampling` is a point mass at `N` (progressive training without
//! lessons). When `N = L` every kind is a point mass at `L`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplerKind {
    Lvps,
    Es,
    Us,
    Fs,
    NoSampling,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 5] = [Self::Lvps, Self::Es, Self::Us, Self::Fs, Self::NoSampling];

    /// `k = 0` for LVPS, `k = 10` for ES; unused elsewhere.
    pub fn default_k(self) -> f64 {
        match self {
            Self::Es => 10.0,
            _ => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Lvps => "lvps",
            Self::Es => "es",
            Self::Us => "us",
            Self::Fs => "fs",
            Self::NoSampling => "none",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Sampler kind plus its shape parameter `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub k: f64,
}

impl SamplerSpec {
    pub fn new(kind: SamplerKind) -> Self {
        Self {
            kind,
            k: kind.default_k(),
        }
    }

    pub fn with_k(kind: SamplerKind, k: f64) -> Self {
        Self { kind, k }
    }

    pub fn pmf(&self, floor: usize, depth: usize) -> Result<DepthPmf> {
        build_pmf(self.kind, floor, depth, self.k)
    }
}

/// LVPS constants `(b, c)` from `F(N) = 0`, `F(L) = 1` with `F(x) = c - b/(x+k)`.
pub fn lvps_constants(floor: usize, depth: usize, k: f64) -> Result<(f64, f64)> {
    if floor >= depth {
        return Err(Error::DegenerateStage { n: floor, l: depth });
    }
    check_k(k, floor)?;
    let (n, l) = (floor as f64, depth as f64);
    Ok(((n + k) * (l + k) / (l - n), (l + k) / (l - n)))
}

/// ES offset `b > 0` that normalises the edge density on `[N, L]`.
pub fn es_offset(floor: usize, depth: usize, k: f64) -> Result<f64> {
    if floor >= depth {
        return Err(Error::DegenerateStage { n: floor, l: depth });
    }
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::Sampler(format!("ES needs finite k > 0, got {k}")));
    }
    Ok((depth - floor) as f64 / libm::expm1(k / 2.0))
}

fn check_k(k: f64, floor: usize) -> Result<()> {
    if !(k >= 0.0) || !k.is_finite() || floor as f64 + k <= 0.0 {
        return Err(Error::Sampler(format!("LVPS needs finite k >= 0 with N + k > 0, got k={k}")));
    }
    Ok(())
}

/// Continuous LVPS density at `x`.
pub fn lvps_density(floor: usize, depth: usize, k: f64, x: f64) -> Result<f64> {
    let (b, _) = lvps_constants(floor, depth, k)?;
    if x < floor as f64 || x > depth as f64 {
        return Ok(0.0);
    }
    Ok(b / ((x + k) * (x + k)))
}

/// Continuous ES density at `x`.
pub fn es_density(floor: usize, depth: usize, k: f64, x: f64) -> Result<f64> {
    let b = es_offset(floor, depth, k)?;
    if x < floor as f64 || x > depth as f64 {
        return Ok(0.0);
    }
    Ok((1.0 / (x - floor as f64 + b) + 1.0 / (depth as f64 + b - x)) / k)
}

/// Probability vector over depths `floor..=depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthPmf {
    floor: usize,
    probs: Vec<f64>,
}

pub fn build_pmf(kind: SamplerKind, floor: usize, depth: usize, k: f64) -> Result<DepthPmf> {
    if floor == 0 || floor > depth {
        return Err(Error::Sampler(format!("need 1 <= N <= L, got N={floor} L={depth}")));
    }
    let len = depth - floor + 1;
    let point = |at: usize| {
        let mut probs = vec![0.0; len];
        probs[at - floor] = 1.0;
        DepthPmf { floor, probs }
    };
    if floor == depth {
        return Ok(point(depth));
    }
    let weights: Vec<f64> = match kind {
        SamplerKind::Fs => return Ok(point(depth)),
        SamplerKind::NoSampling => return Ok(point(floor)),
        SamplerKind::Us => vec![1.0; len],
        SamplerKind::Lvps => {
            check_k(k, floor)?;
            (floor..=depth)
                .map(|d| {
                    let x = d as f64 + k;
                    1.0 / (x * x)
                })
                .collect()
        }
        SamplerKind::Es => (floor..=depth)
            .map(|d| es_density(floor, depth, k, d as f64))
            .collect::<Result<_>>()?,
    };
    let total: f64 = weights.iter().sum();
    let probs = weights.into_iter().map(|w| w / total).collect();
    Ok(DepthPmf { floor, probs })
}

impl DepthPmf {
    pub fn floor(&self) -> usize {
        self.floor
    }

    pub fn ceiling(&self) -> usize {
        self.floor + self.probs.len() - 1
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, depth: usize) -> f64 {
        depth
            .checked_sub(self.floor)
            .and_then(|i| self.probs.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    /// `(depth, probability)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs.iter().enumerate().map(|(i, &p)| (self.floor + i, p))
    }

    pub fn expected_depth(&self) -> f64 {
        self.iter().map(|(d, p)| d as f64 * p).sum()
    }

    /// Inverse-CDF draw consuming exactly one value from `rng`.
    pub fn sample(&self, rng: &mut CounterRng) -> usize {
        self.depth_at(rng.next_unit())
    }

    /// Depth whose CDF interval contains `u ∈ [0, 1)`.
    pub fn depth_at(&self, u: f64) -> usize {
        let mut cumulative = 0.0;
        let mut last = self.floor;
        for (d, p) in self.iter() {
            if p <= 0.0 {
                continue;
            }
            cumulative += p;
            last = d;
            if u < cumulative {
                return d;
            }
        }
        // rounding left the total a hair under 1
        last
    }
}
