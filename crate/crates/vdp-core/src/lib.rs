//! Sampling-free Bayesian deep learning by propagating the mean and
//! diagonal variance of a fully factorized Gaussian posterior through
//! every layer, trained with a closed-form ELBO, with continual learning
//! by recycling each task's posterior as the next task's prior.

pub mod continual;
pub mod data;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod layers;
pub mod network;
pub mod numerics;
pub mod objective;
pub mod param;
pub mod prior;
pub mod results;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Result, VdpError};
pub use gaussian::GaussianTensor;
pub use rng::SeededRng;
pub use tensor::Tensor;
