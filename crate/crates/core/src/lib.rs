//! Semi-supervised VAE (SSVAE) and Gaussian-mixture deep generative model
//! (GM-DGM) trained under unsupervised, semi-supervised and
//! semi-unsupervised label regimes.

pub mod autodiff;
pub mod data;
pub mod distributions;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
