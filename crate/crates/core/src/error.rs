use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("softmax row {row} is fully masked")]
    FullyMaskedRow { row: usize },
    #[error("target id {id} at position {position} is outside vocabulary of size {vocab}")]
    TargetOutOfRange {
        position: usize,
        id: usize,
        vocab: usize,
    },
    #[error("token id {id} at position {position} is outside table of {rows} rows")]
    TokenOutOfRange {
        position: usize,
        id: usize,
        rows: usize,
    },
    #[error("every target position is ignored")]
    NoTargets,
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("slot count {n_slots} outside [1, {depth}]")]
    SlotCount { n_slots: usize, depth: usize },
    #[error("layer map entry {entry} at layer {layer} outside bank of {n_slots} slots")]
    MapEntry {
        layer: usize,
        entry: usize,
        n_slots: usize,
    },
    #[error("sequence length {len} exceeds context length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("depth map requires 1 <= from <= to, got from={from} to={to}")]
    MapRange { from: usize, to: usize },
    #[error("cannot shrink bank from {from} to {to} slots")]
    Shrink { from: usize, to: usize },
    #[error("sampler needs N < L, got N={n} L={l}")]
    DegenerateStage { n: usize, l: usize },
    #[error("invalid sampler input: {0}")]
    Sampler(String),
    #[error("invalid stage schedule: {0}")]
    Schedule(String),
    #[error("step {step} outside [1, {total}]")]
    StepOutOfRange { step: usize, total: usize },
    #[error("gradients have not been computed")]
    NoGradients,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite loss {loss} at step {step} (depth {depth})")]
    NonFiniteLoss { step: usize, depth: usize, loss: f64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
