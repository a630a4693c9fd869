//! Fourier kernels, the multi-coil encoding operator, and reconstructions.

mod fft;
mod operators;
mod sense;
mod sensitivity;

use thiserror::Error;

pub use fft::{fft2c, Direction, Fft2Plan};
pub use operators::{adjoint_operator, coil_images, forward_operator, rss_combine, zero_fill_recon};
pub use sense::{cg_sense, CgConfig, CgTrace};
pub use sensitivity::{estimate_sensitivities, MIN_ACS_LINES};

use crate::model::ModelError;
use crate::sampling::SamplingError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReconError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sensitivity estimation failed: {0}")]
    Estimation(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("numerical divergence at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}
