//! Core of the hybrid CNN-Mamba enhancement network (HCMEN): a small dense
//! tensor library with reverse-mode autodiff, selective state-space kernels,
//! the per-modality hierarchical encoder, cross-modal enhancement & alignment,
//! mix-up fusion, metrics and the Adam optimizer.
//!
//! The crate is `no_std`-compatible (alloc required); everything here is pure
//! computation. File formats, dataset IO, the CLI and wall-clock benchmarks
//! live in the companion `hcmen` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autograd;
pub mod blocks;
pub mod cmea;
pub mod config;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod ssm;
pub mod tensor;

pub use autograd::{Gradients, Tape, Var};
pub use config::{CorruptionMode, ModelConfig, SubstitutionMode};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use model::HcmenModel;
pub use params::ParamStore;
pub use tensor::{Element, Tensor};
