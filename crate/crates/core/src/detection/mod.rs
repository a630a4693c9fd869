//! Lesion detection and detection-based evaluation.

mod blob;
mod matching;
mod report;
mod types;

use thiserror::Error;

pub use blob::blob_detect;
pub use matching::{iou, match_detections, SliceOutcome};
pub use report::{
    aggregate_report, evaluate, ssim_group_means, EvaluationConfig, EvaluationReport, MetricsDocument, Provenance,
    SliceGroup, SliceMetrics, SliceRecord,
};
pub use types::{
    detections_to_json, ground_truth_to_json, load_external_detections, load_ground_truth, BoundingBox, Detection,
    GroundTruthAnnotation,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("record {record}: {message}")]
    Validation { record: usize, message: String },
    #[error("slice sets do not align: {0}")]
    SliceMismatch(String),
    #[error("invalid evaluation configuration: {0}")]
    Config(String),
}
