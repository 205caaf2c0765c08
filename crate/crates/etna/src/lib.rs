//! Multi-task demographic attribute prediction from retail transaction
//! histories.
//!
//! The crate trains a family of embedding models that read a user's set of
//! purchased companies and jointly predict gender, age group, and marital
//! status. The full model transforms a shared company embedding into one
//! vector space per task and pools it with task-specific attention; ablated
//! variants (no attention, no transformation, fully separate embeddings) and
//! non-neural baselines (majority class, truncated SVD plus logistic heads)
//! are included for comparison. All gradients are hand-derived and verified
//! against central finite differences.
//!
//! Entry points:
//! - [`corpus`]: CSV ingestion, partial-label masks, new-user splits, and a
//!   planted-signal synthetic generator with an exact Bayes oracle.
//! - [`model`]: forward pass, masked multi-task loss, backward pass, and
//!   prediction for the JNE / SEP / ETN / ETNA variants.
//! - [`baselines`]: POP and SVD reference predictors.
//! - [`metrics`]: Hamming loss and macro/weighted precision, recall, F1 over
//!   label combinations.
//! - [`trainkit`]: mini-batch Adam training with early stopping, observed-
//!   ratio sweeps, and the new-user protocol.
//! - [`cli`]: the `etna` binary's subcommands (also callable as a library).
//!
//! Runnable walkthroughs live in `examples/`; start with
//! `cargo run --release -p etna --example train_new_user`.

pub mod baselines;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod trainkit;

pub use error::{Error, Result};
