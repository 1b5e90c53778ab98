//! Video segmentation with a Siamese pyramid transformer and mixture
//! attention, built on a from-scratch f64 autodiff so every gradient and
//! metric can be checked against independent oracles.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] / [`tape`] / [`optim`] — dense f64 tensors, reverse-mode
//!   differentiation, Adam;
//! - [`encoder`] — weight-shared pyramid transformer plus texture
//!   enhancement on the coarsest level;
//! - [`attention`] — joint attention matrix over paired frame embeddings,
//!   its mutual/self sub-blocks, and the λ-weighted fusion;
//! - [`decoder`] / [`loss`] — coarse neighbor fusion, reverse-attention
//!   refinement, deep supervision, weighted BCE + IoU;
//! - [`metrics`] — Dice, mean/weighted F, sensitivity, S-measure,
//!   E-measure, threshold-sweep curves;
//! - [`data`] — synthetic clip generation, directory ingestion, and the
//!   (t, t−Δ) pair sampler;
//! - [`model`] / [`harness`] — the assembled network, checkpoints, and the
//!   train/eval/ablate engines behind the CLI.

pub mod attention;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod gradcheck;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use tensor::{Tensor, TensorError};
