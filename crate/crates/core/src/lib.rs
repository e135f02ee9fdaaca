//! Sparse representation learning for reinforcement learning control.
//!
//! Pretrains a neural network representation with a value-prediction
//! objective plus a sparsity regularizer, then freezes it and uses it as the
//! feature map of a linear Sarsa(0) learner. Tile coding is provided as a
//! fixed sparse baseline, and the analysis module measures sparsity and
//! overlap of any learned representation.

pub mod analysis;
mod binio;
pub mod control;
pub mod env;
pub mod error;
pub mod linalg;
pub mod network;
pub mod regularizers;
pub mod seed;
pub mod tilecoding;
pub mod training;

pub use control::{ControlConfig, Features, FeatureMap, LearningCurve, LinearQ, Probe};
pub use env::{Domain, EnvConfig, EnvState, Environment, Transition};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use network::{Activation, Checkpoint, MlpParams};
pub use regularizers::RegularizerSpec;
pub use seed::{child_rng, child_seed, rng_from_seed, SimRng};
pub use tilecoding::{TileCoder, TileCoderConfig};
pub use training::{TrainConfig, TransitionBatch};
