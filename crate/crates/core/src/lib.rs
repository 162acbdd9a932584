//! Evaluation and training toolkit for question-answering models with an
//! abstention option.
//!
//! A selective model pairs a predictor `f` with a selection function `g` that
//! decides, per input, whether to answer (`g = 1`) or abstain (`g = 0`).
//! Given serialized per-example prediction records, this crate computes
//! multi-reference answer accuracy, coverage, risk, risk-coverage curves and
//! their AUC, coverage-at-risk, expected calibration error, and the effective
//! reliability score `Φ_c`, and trains three selection functions: MaxProb,
//! vector-scaling calibration, and a learned multimodal selector.
//!
//! Modules:
//!
//! - [`records`] — on-disk/in-memory data model, validation, splits, pooling
//! - [`accuracy`] — multi-reference accuracy oracle and soft target scores
//! - [`metrics`] — coverage, risk, risk-coverage curves, AUC, C@R, ECE
//! - [`reliability`] — effective reliability `Φ_c`, threshold selection,
//!   threshold generalization, seed aggregation, difficulty grouping
//! - [`nn`] — minimal differentiable feedforward stack with AdamW and
//!   finite-difference gradient verification
//! - [`selectors`] — MaxProb, vector-scaling calibration, learned selector
//! - [`synth`] — deterministic synthetic benchmark generator

pub mod accuracy;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod records;
pub mod reliability;
pub mod selectors;
pub mod synth;

pub use error::{Error, Result};
