//! Progressive-depth transformer training over a shared weight bank.
//!
//! A bank of `N` block slots drives a transformer of any virtual depth
//! `L' >= N` through a [`LayerMap`]. During early stages the depth is drawn
//! each step from a low-depth-favouring distribution, so a few slots learn
//! to act as a deep network; at stage boundaries the bank grows by
//! interpolation until it reaches the target depth.
//!
//! The crate is `no_std` + `alloc`. File formats, corpora and the CLI live
//! in the harness crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod error;
pub mod flops;
pub mod maps;
pub mod model;
pub mod optim;
pub mod rng;
pub mod sampler;
pub mod scheduler;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use flops::{saving_ratio, step_flops, LossCurve, Saving};
pub use maps::{expand_bank, Expansion, LayerMap, MapKind};
pub use model::{ModelConfig, NormPlacement, TokenBatch, WeightBank};
pub use optim::AdamW;
pub use rng::{CounterRng, RngState};
pub use sampler::{build_pmf, lvps_constants, DepthPmf, SamplerKind, SamplerSpec};
pub use scheduler::{
    run_training, BatchSource, MetricSink, RunError, StageSchedule, StepRecord, TrainMode, TrainSettings,
    TrainState,
};
pub use tensor::Tensor;
