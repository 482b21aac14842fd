//! Learning under simultaneous label noise and long-tailed class imbalance.
//!
//! The pipeline has two stages:
//!
//! 1. A shared encoder is trained with a queue-based contrastive objective
//!    (stop-gradient on the query branch) while a linear pre-screening
//!    classifier is trained on the detached features with the BANC loss.
//! 2. Observed labels are refurbished into soft labels weighted by the
//!    pre-screening confidence and the rarity of the observed class, then
//!    three expert heads are trained over the frozen encoder with
//!    shot-adaptive losses and fused into an ensemble.
//!
//! Everything runs on dense feature vectors. [`datagen`] builds long-tailed
//! Gaussian-mixture benchmarks with controlled symmetric or asymmetric label
//! noise, or imports externally computed embeddings.
//!
//! Per-sample forward/backward work is data-parallel through rayon when the
//! `parallel` feature is enabled (the default). Reductions always run in
//! sample order, so results are bit-identical with and without the feature.

pub mod baseline;
pub mod datagen;
pub mod ensemble;
pub mod error;
pub mod jsonl;
pub mod loss;
pub mod numerics;
pub mod par;
pub mod pipeline;
pub mod refurbish;
pub mod stage1;

pub use error::{Error, Result};
