//! Quality-gated, cost-optimal prompt routing.
//!
//! The crate routes each prompt to the cheapest candidate model whose
//! predicted quality clears a tolerance-derived threshold. It ships the
//! pieces needed to do that end to end:
//!
//! - [`registry`]: candidate models, families, and exact unit prices.
//! - [`dataset`]: reward-labeled prompt records (JSONL), synthesis, splits.
//! - [`encoder`]: prompt featurizers (hashed n-grams or precomputed vectors).
//! - [`estimator`]: the trainable per-family quality estimator and adapters.
//! - [`router`]: tolerance gating, feasible sets, cost-minimal selection.
//! - [`evalsuite`]: MAE, Top-K, Bounded-ARQGC, CSR, cost model, baselines.
//! - [`mod@bench`]: single-request decision latency measurement.
//! - [`service`]: a small JSON-over-HTTP routing service.

// `!(x > 0.0)` guards are deliberate: NaN must take the rejecting branch,
// which the positive comparison forms silently let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod estimator;
pub mod evalsuite;
pub mod registry;
pub mod router;
pub mod service;

pub use error::{Error, Result};
pub use registry::{ModelCandidate, Price, Registry};
