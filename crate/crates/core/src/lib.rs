//! Despeckling of SAR intensity images with a convolutional network that
//! estimates the speckle field and divides it out, trained end to end with a
//! Euclidean plus total-variation objective.
//!
//! Images live in `[0, 1]`; speckle follows `Y = F·X` with unit-mean Gamma
//! `F` of variance `1/L`.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod speckle;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use image::Image;
pub use network::{Architecture, Mode, NetworkParams};
pub use tensor::{Dims, Tensor4};
