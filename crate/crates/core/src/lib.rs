//! Compressive-sensing recovery of image patches with stacked denoising
//! autoencoders, plus a wavelet ISTA baseline and the evaluation harness
//! that compares them.

pub mod baseline;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod measurement;
pub mod model;
pub mod numeric;
pub mod recovery;
pub mod training;

pub use error::{Error, Result};
