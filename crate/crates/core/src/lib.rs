//! Randomized autoregressive (RAR) sequence modeling at desk scale.
//!
//! A causal transformer is trained on discrete token grids under randomly
//! permuted factorization orders. The probability of drawing a random order
//! is annealed from 1 to 0 so the model ends up as a conventional raster-order
//! autoregressive model. Target-aware positional embeddings tell every step
//! which position it is predicting next.
//!
//! The data source is a class-conditional Potts lattice whose exact
//! conditionals can be enumerated, so every likelihood the model reports can
//! be checked against ground truth.
//!
//! Module map:
//! - [`permute`]: scan orders, random orders, the annealing schedule.
//! - [`gridtok`]: the Potts token source, exact oracles and shard files.
//! - [`model`]: the transformer, its gradients, checkpoints.
//! - [`train`]: AdamW, warmup + cosine LR, clipping, the training loop.
//! - [`sample`]: KV-cached sampling with classifier-free guidance.
//! - [`eval`]: NLL under any order, oracle gaps, probes, sweeps, grad checks.

pub mod error;
pub mod eval;
pub mod gridtok;
pub mod model;
pub mod num;
pub mod permute;
pub mod ppm;
pub mod rng;
pub mod sample;
pub mod train;

pub use error::{Error, Result};
pub use gridtok::{DatasetShard, GridSpec, TokenGrid};
pub use model::{KvCache, ModelConfig, ModelParams};
pub use permute::{AnnealSchedule, Permutation, ScanKind};
pub use sample::SampleConfig;
pub use train::TrainConfig;
