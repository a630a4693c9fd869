//! Detection-sensitivity reports with per-slice image-quality records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matching::{match_detections, SliceOutcome};
use super::types::{Detection, GroundTruthAnnotation};
use super::DetectionError;
use crate::metrics::SsimParams;
use crate::recon::CgConfig;

/// Parameters a report was produced with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub rng: Option<String>,
    pub mask_seed: Option<u64>,
    pub acs_fraction: Option<f64>,
    pub cg: Option<CgConfig>,
    pub ssim: Option<SsimParams>,
    pub detector: Option<String>,
    pub iou_threshold: Option<f64>,
    pub confidence_threshold: Option<f64>,
}

/// Image-quality record for one reconstructed slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub slice: u32,
    pub ssim: Option<f64>,
    pub nmse: Option<f64>,
    /// Sampling pattern as one `0`/`1` per phase-encode line.
    pub mask: Option<String>,
}

/// Per-slice metrics of one reconstruction run (the `--ssim` input of `evaluate`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub method: Option<String>,
    pub rate: Option<f64>,
    pub data_range: Option<f64>,
    pub provenance: Provenance,
    pub slices: Vec<SliceMetrics>,
}

impl MetricsDocument {
    pub fn from_json(document: &str) -> Result<Self, DetectionError> {
        serde_json::from_str(document).map_err(|e| DetectionError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics always serialize")
    }
}

/// Slice grouping used for the SSIM comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceGroup {
    /// At least one true positive.
    Tp,
    /// At least one missed lesion and no true positive.
    Fn,
    /// Only false positives.
    Fp,
    /// Nothing detected, nothing annotated.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRecord {
    pub slice: u32,
    pub group: SliceGroup,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ssim: Option<f64>,
    pub nmse: Option<f64>,
    pub mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: Option<String>,
    pub rate: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub sensitivity: Option<f64>,
    pub mean_ssim_tp: Option<f64>,
    pub mean_ssim_fn: Option<f64>,
    /// Mean over slices with at least one false positive.
    pub mean_ssim_fp: Option<f64>,
    pub volume_mean_ssim: Option<f64>,
    pub data_range: Option<f64>,
    pub provenance: Provenance,
    pub slices: Vec<SliceRecord>,
}

impl EvaluationReport {
    /// Canonical serialized form; reports produced by different paths compare byte for byte.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn from_json(document: &str) -> Result<Self, DetectionError> {
        serde_json::from_str(document).map_err(|e| DetectionError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}

fn group_of(tp: usize, fp: usize, fn_: usize) -> SliceGroup {
    if tp > 0 {
        SliceGroup::Tp
    } else if fn_ > 0 {
        SliceGroup::Fn
    } else if fp > 0 {
        SliceGroup::Fp
    } else {
        SliceGroup::None
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Totals the outcomes over the metric slices. Every outcome slice must have a
/// metric record; metric slices without an outcome count as empty.
pub fn aggregate_report(
    outcomes: &[SliceOutcome],
    per_slice_metrics: &[SliceMetrics],
) -> Result<EvaluationReport, DetectionError> {
    let metric_slices: BTreeMap<u32, &SliceMetrics> =
        per_slice_metrics.iter().map(|m| (m.slice, m)).collect();
    if metric_slices.len() != per_slice_metrics.len() {
        return Err(DetectionError::SliceMismatch("duplicate slice in metrics".into()));
    }
    let by_slice: BTreeMap<u32, &SliceOutcome> = outcomes.iter().map(|o| (o.slice_index, o)).collect();
    if let Some(missing) = by_slice.keys().find(|s| !metric_slices.contains_key(s)) {
        return Err(DetectionError::SliceMismatch(format!(
            "slice {missing} has detections or annotations but no reconstruction metrics"
        )));
    }

    let slices: Vec<SliceRecord> = metric_slices
        .values()
        .map(|m| {
            let (tp, fp, fn_) = by_slice
                .get(&m.slice)
                .map_or((0, 0, 0), |o| (o.tp, o.fp, o.fn_));
            SliceRecord {
                slice: m.slice,
                group: group_of(tp, fp, fn_),
                tp,
                fp,
                fn_,
                ssim: m.ssim,
                nmse: m.nmse,
                mask: m.mask.clone(),
            }
        })
        .collect();

    let tp = slices.iter().map(|s| s.tp).sum::<usize>();
    let fp = slices.iter().map(|s| s.fp).sum::<usize>();
    let fn_ = slices.iter().map(|s| s.fn_).sum::<usize>();
    let mut report = EvaluationReport {
        method: None,
        rate: None,
        tp,
        fp,
        fn_,
        sensitivity: (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64),
        mean_ssim_tp: None,
        mean_ssim_fn: None,
        mean_ssim_fp: None,
        volume_mean_ssim: mean(slices.iter().filter_map(|s| s.ssim)),
        data_range: None,
        provenance: Provenance::default(),
        slices,
    };
    let (tp_mean, fn_mean) = ssim_group_means(&report);
    report.mean_ssim_tp = tp_mean;
    report.mean_ssim_fn = fn_mean;
    report.mean_ssim_fp = mean(report.slices.iter().filter(|s| s.fp > 0).filter_map(|s| s.ssim));
    Ok(report)
}

/// Mean SSIM over TP-group slices and over FN-group slices.
pub fn ssim_group_means(report: &EvaluationReport) -> (Option<f64>, Option<f64>) {
    let of = |g: SliceGroup| {
        mean(
            report
                .slices
                .iter()
                .filter(|s| s.group == g)
                .filter_map(|s| s.ssim),
        )
    };
    (of(SliceGroup::Tp), of(SliceGroup::Fn))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationConfig {
    pub iou_threshold: f64,
    /// Detections below this confidence are discarded before matching.
    pub confidence_threshold: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            confidence_threshold: 0.0,
        }
    }
}

/// Matches detections against ground truth and attaches the run's metrics.
/// Without metrics the slice set is every slice that has a detection or annotation.
pub fn evaluate(
    metrics: Option<&MetricsDocument>,
    dets: &[Detection],
    gts: &[GroundTruthAnnotation],
    cfg: &EvaluationConfig,
) -> Result<EvaluationReport, DetectionError> {
    if !(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0) {
        return Err(DetectionError::Config(format!(
            "iou threshold {} outside (0, 1]",
            cfg.iou_threshold
        )));
    }
    let kept: Vec<Detection> = dets
        .iter()
        .filter(|d| d.confidence >= cfg.confidence_threshold)
        .copied()
        .collect();
    let outcomes = match_detections(&kept, gts, cfg.iou_threshold);
    let fallback: Vec<SliceMetrics>;
    let slice_metrics = match metrics {
        Some(m) => &m.slices,
        None => {
            fallback = outcomes
                .iter()
                .map(|o| SliceMetrics {
                    slice: o.slice_index,
                    ssim: None,
                    nmse: None,
                    mask: None,
                })
                .collect();
            &fallback
        }
    };
    let mut report = aggregate_report(&outcomes, slice_metrics)?;
    let mut provenance = metrics.map(|m| m.provenance.clone()).unwrap_or_default();
    provenance.iou_threshold = Some(cfg.iou_threshold);
    provenance.confidence_threshold = Some(cfg.confidence_threshold);
    report.provenance = provenance;
    if let Some(m) = metrics {
        report.method = m.method.clone();
        report.rate = m.rate;
        report.data_range = m.data_range;
    }
    Ok(report)
}
