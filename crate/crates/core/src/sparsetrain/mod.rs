//! Small CNN trainer with an L1 penalty on post-ReLU activations.
//!
//! Pretraining minimizes cross-entropy plus weight decay; fine-tuning adds
//! `alpha_l * ||x_l||_1` for each named activation map so that more of its
//! entries land exactly on zero.

mod scalar;

pub mod data;
pub mod gradcheck;
pub mod network;
pub mod optim;
pub mod train;

use thiserror::Error;

pub use network::{l1_subgradient, lenet5, ForwardTrace, Gradients, LayerKind, LayerSpec, Network, Params, Shape};
pub use optim::Sgd;
pub use scalar::Scalar;
pub use train::{speedup, SpeedupConvention};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("trace was produced by different weights")]
    StaleTrace,
    #[error("dataset error: {0}")]
    Data(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
