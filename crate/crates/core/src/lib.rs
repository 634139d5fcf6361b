//! Sensing-aided FDD multi-user precoding trained with vertical federated
//! learning: a synthetic scene that produces channels and sensor data from
//! one geometry, per-vehicle models trained by exchanging precoder outputs
//! and server gradients, classical ZF/WMMSE/MRT anchors, and experiment
//! tooling.

pub mod airlink;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod local_model;
pub mod nn;
pub mod preprocess;
pub mod scalar;
pub mod scene;
pub mod seeding;
pub mod vfl;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Network32 = nn::Network<f32>;
pub type Network64 = nn::Network<f64>;
pub type LocalModel32 = local_model::LocalModel<f32>;
pub type LocalModel64 = local_model::LocalModel<f64>;
pub type Fleet32 = vfl::Fleet<f32>;
pub type Fleet64 = vfl::Fleet<f64>;
pub type Precoder32 = airlink::PrecodingMatrix<f32>;
pub type Precoder64 = airlink::PrecodingMatrix<f64>;
