//! Gadget-chain runtime: accumulate → recon → detect → report, one thread per
//! stage, bounded queues between stages.

mod accumulate;
mod config;
mod gadgets;
mod runtime;

use thiserror::Error;

pub use accumulate::{DatasetHeader, SliceAssembler, DATASET_FORMAT, DATASET_VERSION};
pub use config::{
    AccumulateConfig, ChainConfig, DetectConfig, DetectMethod, GadgetConfig, MaskSource, Normalize, ReconConfig,
    ReconMethod, ReportConfig, DEFAULT_BLOB_MIN_AREA, DEFAULT_BLOB_THRESHOLD, DEFAULT_QUEUE_CAPACITY,
};
pub use gadgets::{AccumulateGadget, DetectGadget, ReconGadget, ReportGadget};
pub(crate) use runtime::error_report;
pub use runtime::{build_chain, output_messages, run_chain, Chain, ChainInput, ChainOutput, Gadget, Item, ReconImage};

use crate::detection::DetectionError;
use crate::metrics::MetricError;
use crate::model::ModelError;
use crate::recon::ReconError;
use crate::sampling::SamplingError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("assembly error in slice {slice}, line {line}: {message}")]
    Assembly { slice: u32, line: usize, message: String },
    #[error("{0}")]
    Io(String),
    #[error("chain input closed")]
    Closed,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}
