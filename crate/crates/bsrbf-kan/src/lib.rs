//! BSRBF-KAN: Kolmogorov-Arnold network layers that combine B-spline and
//! radial-basis-function expansions, together with the baselines, training
//! loop, data loading, and experiment harness used to evaluate them on
//! MNIST-style image classification.
//!
//! The crate is generic over its scalar type (`f32` or `f64`) through the
//! [`num::Real`] trait; the type aliases at the crate root fix `f64`, which
//! is what every published result in the README uses.

pub mod basis;
pub mod data;
pub mod error;
pub mod layers;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod num;
pub mod optim;
pub mod report;
pub mod rng;
pub mod train;

pub use data::{DatasetName, Normalization, Split};
pub use error::{Error, Result};
pub use metrics::{Confusion, Evaluation};
pub use model::{softmax_cross_entropy, ModelConfig, ModelKind};
pub use num::Real;
pub use optim::{AdamWOptions, LrSchedule};
pub use rng::SeededRng;
pub use train::{RunMetrics, TrainOptions};

/// Dense `f64` matrix (the default precision used by the harness).
pub type Matrix = matrix::Matrix<f64>;

/// `f64` network (the default precision used by the harness).
pub type Network = model::Network<f64>;

/// `f64` dataset (the default precision used by the harness).
pub type Dataset = data::Dataset<f64>;
