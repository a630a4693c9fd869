//! Streaming k-space reconstruction with lesion-detection evaluation.
//!
//! Raw multi-coil data arrives as wire messages, is assembled into slices,
//! reconstructed (zero-fill or CG-SENSE), run through a detector and scored
//! against ground truth. [`pipeline`] wires the stages together; [`wire`]
//! carries them over TCP.

pub mod cli;
pub mod dataset;
pub mod detection;
pub mod metrics;
pub mod model;
pub mod pgm;
pub mod phantom;
pub mod pipeline;
pub mod recon;
pub mod sampling;
pub mod wire;
