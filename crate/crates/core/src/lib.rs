//! Drift-aware ML pipeline orchestration.

// Checks like `!(x > 0.0)` are written that way so NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod drift;
pub mod feature_store;
pub mod fsutil;
pub mod harness;
pub mod learner;
pub mod monitor;
pub mod pipeline;
pub mod registry;
pub mod retrain;
pub mod synth;
pub mod validation;
