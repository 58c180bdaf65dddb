//! Reinforced self-attention sentence encoding.
//!
//! The crate builds up in layers:
//!
//! - [`graph`]: a small reverse-mode autodiff tape over dense tensors,
//!   with a masked softmax and the handful of primitives everything else
//!   composes from; [`gradcheck`] holds its finite-difference oracle.
//! - [`attention`]: the soft family — vanilla/multi-dim attention, masked
//!   self-attention with positional masks, the fusion gate, source2token.
//! - [`sampling`]: reinforced sequence sampling (parallel Bernoulli token
//!   selection) and the sequential iterative baseline it outperforms.
//! - [`encoder`]: ReSA — selection masks fused with soft attention — and
//!   the ReSAN sentence encoder with its simplified variants.
//! - [`training`]: supervised loss, reward, REINFORCE with an exact
//!   enumeration oracle, Adadelta, and the warmup/joint schedule.
//! - [`data`] / [`io`]: embeddings, datasets, the synthetic long-range
//!   task, traces, metrics and checkpoints.
//!
//! Batch work is data-parallel through [`par`] (rayon under the default
//! `parallel` feature, sequential otherwise) with RNG streams keyed so
//! results do not depend on scheduling.

// `as Real` casts are identity in the default f64 build but load-bearing
// under the `f32` feature.
#![allow(clippy::unnecessary_cast)]

pub mod attention;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod model;
pub mod par;
pub mod params;
pub mod rng;
pub mod sampling;
pub mod suite;
pub mod training;

/// Scalar type for all numerics: `f64` by default, `f32` behind the `f32`
/// feature for speed runs. The documented gradient-check tolerances assume
/// the default.
#[cfg(feature = "f32")]
pub type Real = f32;
#[cfg(not(feature = "f32"))]
pub type Real = f64;

pub use error::{Error, Result};
pub use graph::{Graph, Tensor, MASK_SENTINEL};
pub use model::{ModelConfig, PreparedExample, ResanModel, Target, TaskKind};
pub use params::{GradMap, ParamKind, ParamSet};
pub use rng::RngKey;
pub use training::{TrainConfig, Trainer};
