//! `.aplo` checkpoints: the whole training state, bit-exact.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      4 bytes  "APLO"
//! version    u32      = 1
//! config     u32 × 6  depth, d_model, n_heads, ffn_ratio, vocab_size, seq_len
//!            u8       norm placement (0 pre, 1 post)
//! opt_step   u64      optimizer updates applied
//! step       u64      last completed training step
//! stage      u32
//! cum_flops  u64
//! rng        32 bytes seed, u64 stream, u128 word position
//! n_slots    u32
//! n_tensors  u32
//! tensor     u32 name length, name (UTF-8), u32 rank, u64 × rank dims,
//!            then value, first moment, second moment as f64 × numel each
//! ```
//!
//! Tensors appear in `WeightBank::named_params` order.

use std::path::Path;

use apollo_core::{CounterRng, ModelConfig, NormPlacement, RngState, TrainState, WeightBank};

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"APLO";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("incompatible checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn u32_of(n: usize, what: &str) -> u32 {
    u32::try_from(n).unwrap_or_else(|_| panic!("{what} {n} exceeds u32"))
}

pub fn encode(state: &TrainState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let c = state.bank.config();
    for v in [c.depth, c.d_model, c.n_heads, c.ffn_ratio, c.vocab_size, c.seq_len] {
        w.u32(u32_of(v, "config field"));
    }
    w.u8(match c.norm_placement {
        NormPlacement::Pre => 0,
        NormPlacement::Post => 1,
    });
    w.u64(state.bank.step);
    w.u64(state.step as u64);
    w.u32(u32_of(state.stage, "stage"));
    w.u64(state.cum_flops);
    let rng = state.rng.state();
    w.0.extend_from_slice(&rng.seed);
    w.u64(rng.stream);
    w.0.extend_from_slice(&rng.word_pos.to_le_bytes());
    w.u32(u32_of(state.bank.n_slots(), "slot count"));
    let params = state.bank.named_params();
    w.u32(u32_of(params.len(), "tensor count"));
    for (name, p) in params {
        w.u32(u32_of(name.len(), "name length"));
        w.0.extend_from_slice(name.as_bytes());
        w.u32(u32_of(p.value.shape().len(), "rank"));
        for &d in p.value.shape() {
            w.u64(d as u64);
        }
        w.f64s(p.value.data());
        w.f64s(&p.first_moment);
        w.f64s(&p.second_moment);
    }
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(self.buf.len()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        self.array().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        self.array().map(u64::from_le_bytes)
    }
    fn usize(&mut self) -> Result<usize, CheckpointError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| CheckpointError::Malformed(format!("value {v} too large")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated(self.buf.len()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(buf: &[u8]) -> Result<TrainState, CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    if buf.len() < 4 || &r.array::<4>()? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let mut fields = [0usize; 6];
    for f in &mut fields {
        *f = r.u32()? as usize;
    }
    let norm_placement = match r.u8()? {
        0 => NormPlacement::Pre,
        1 => NormPlacement::Post,
        other => return Err(CheckpointError::Malformed(format!("norm placement tag {other}"))),
    };
    let config = ModelConfig {
        depth: fields[0],
        d_model: fields[1],
        n_heads: fields[2],
        ffn_ratio: fields[3],
        vocab_size: fields[4],
        seq_len: fields[5],
        norm_placement,
    };
    let opt_step = r.u64()?;
    let step = r.usize()?;
    let stage = r.u32()? as usize;
    let cum_flops = r.u64()?;
    let seed = r.array::<32>()?;
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.array::<16>()?);
    let n_slots = r.u32()? as usize;
    let n_tensors = r.u32()? as usize;

    let malformed = |e: apollo_core::Error| CheckpointError::Malformed(e.to_string());
    let mut bank = WeightBank::init(&config, n_slots, 0).map_err(malformed)?;
    let names: Vec<(String, Vec<usize>)> = bank
        .named_params()
        .into_iter()
        .map(|(n, p)| (n, p.value.shape().to_vec()))
        .collect();
    if names.len() != n_tensors {
        return Err(CheckpointError::Malformed(format!(
            "{n_tensors} tensors, config implies {}",
            names.len()
        )));
    }
    for ((want_name, want_shape), param) in names.iter().zip(bank.params_mut()) {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if name != want_name {
            return Err(CheckpointError::Malformed(format!("expected tensor `{want_name}`, found `{name}`")));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
        if &shape != want_shape {
            return Err(CheckpointError::Malformed(format!(
                "tensor `{name}` has shape {shape:?}, expected {want_shape:?}"
            )));
        }
        let n = param.value.numel();
        param.value.data_mut().copy_from_slice(&r.f64s(n)?);
        param.first_moment = r.f64s(n)?;
        param.second_moment = r.f64s(n)?;
    }
    if r.pos != buf.len() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    bank.step = opt_step;
    Ok(TrainState {
        bank,
        step,
        stage,
        rng: CounterRng::from_state(RngState {
            seed,
            stream,
            word_pos,
        }),
        cum_flops,
    })
}

pub fn save(path: &Path, state: &TrainState) -> Result<()> {
    std::fs::write(path, encode(state)).map_err(|e| HarnessError::io(path, e))
}

pub fn load(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode(&bytes).map_err(|source| HarnessError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}
