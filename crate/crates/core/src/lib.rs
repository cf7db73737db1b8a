//! Time-series forecasting by video prediction.
//!
//! Price changes are rendered as grayscale frames, a latent residual video
//! model extrapolates the frame sequence, and the decoded frames are scored
//! against baselines with an exponentially weighted sign accuracy.

pub mod baselines;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod manifest;
pub mod model;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
