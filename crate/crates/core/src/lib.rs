//! Continual horizontal federated learning (CHFL) simulator.
//!
//! Clients share a label space and a set of common features but each also
//! holds private unique features. The common column is trained with
//! federated averaging; every client additionally trains a unique column
//! that reads the common column's activations through lateral connections
//! and adds its logits to the common logits before the softmax.
//!
//! Modules:
//! - [`nn`]: dense layers, manual backprop, Adam, finite-difference oracle
//! - [`columns`]: the two-column client model and its checkpoint format
//! - [`federation`]: FedAvg, CHFL and the Local / Concat baselines
//! - [`data`]: ingestion, splitting, feature partitioning, correlation scores
//! - [`gradcheck`]: the gradient oracle suite
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what training uses by default.

pub mod columns;
pub mod data;
pub mod error;
pub mod federation;
pub mod gradcheck;
pub mod nn;
pub mod rng;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type MlpParams = nn::MlpParams<f64>;
pub type MlpParams32 = nn::MlpParams<f32>;
pub type AdamState = nn::AdamState<f64>;
pub type LateralSet = columns::LateralSet<f64>;
pub type ChflClientModel = columns::ChflClientModel<f64>;
pub type ChflClientModel32 = columns::ChflClientModel<f32>;
