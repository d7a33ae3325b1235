//! Desk-scale harness around `apollo-core`: byte-level corpora, flat run
//! configs, `.aplo` checkpoints, JSONL metrics and the experiment drivers
//! behind the `apollo` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod data;
pub mod error;
pub mod experiments;
pub mod metrics;

pub use config::RunConfig;
pub use error::{HarnessError, Result};
