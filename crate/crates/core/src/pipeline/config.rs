//! Chain configuration: an ordered list of gadgets, read from JSON.

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::metrics::SsimParams;
use crate::recon::CgConfig;
use crate::sampling::{default_acs_fraction, MaskPolicy};

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Messages buffered per link between adjacent stages.
    #[serde(default = "default_capacity")]
    pub queue_capacity: usize,
    pub gadgets: Vec<GadgetConfig>,
}

fn default_capacity() -> usize {
    DEFAULT_QUEUE_CAPACITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GadgetConfig {
    Accumulate(AccumulateConfig),
    Recon(ReconConfig),
    Detect(DetectConfig),
    Report(ReportConfig),
}

impl GadgetConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            GadgetConfig::Accumulate(_) => "accumulate",
            GadgetConfig::Recon(_) => "recon",
            GadgetConfig::Detect(_) => "detect",
            GadgetConfig::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccumulateConfig {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconMethod {
    ZeroFill,
    CgSense,
    External,
}

impl ReconMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ReconMethod::ZeroFill => "zero_fill",
            ReconMethod::CgSense => "cg_sense",
            ReconMethod::External => "external",
        }
    }
}

/// Where the sampling pattern of each slice comes from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskSource {
    /// The pattern realized by the arriving acquisitions.
    #[default]
    Stream,
    /// Retrospective undersampling of fully sampled input; each slice is
    /// reseeded from `seed`.
    Policy {
        rate: f64,
        #[serde(default)]
        acs_fraction: Option<f64>,
        seed: u64,
    },
}

impl MaskSource {
    pub fn policy(&self) -> Option<MaskPolicy> {
        match *self {
            MaskSource::Stream => None,
            MaskSource::Policy {
                rate,
                acs_fraction,
                seed,
            } => Some(MaskPolicy {
                nominal_rate: rate,
                acs_fraction: acs_fraction.unwrap_or_else(|| default_acs_fraction(rate)),
                seed,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconConfig {
    pub method: ReconMethod,
    #[serde(default)]
    pub cg: CgConfig,
    #[serde(default)]
    pub mask: MaskSource,
    /// Directory of `slice_NNNN.pgm` files for the external method.
    #[serde(default)]
    pub image_dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectMethod {
    Blob,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    /// Threshold absolute intensities.
    #[default]
    None,
    /// Scale each slice to a maximum of 1 first.
    Slice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    pub method: DetectMethod,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_min_area")]
    pub min_area: usize,
    #[serde(default)]
    pub normalize: Normalize,
    /// Detections document for the external method.
    #[serde(default)]
    pub path: Option<String>,
}

pub const DEFAULT_BLOB_THRESHOLD: f64 = 0.5;
pub const DEFAULT_BLOB_MIN_AREA: usize = 4;

fn default_threshold() -> f64 {
    DEFAULT_BLOB_THRESHOLD
}

fn default_min_area() -> usize {
    DEFAULT_BLOB_MIN_AREA
}

impl DetectConfig {
    pub fn blob() -> Self {
        Self {
            method: DetectMethod::Blob,
            threshold: DEFAULT_BLOB_THRESHOLD,
            min_area: DEFAULT_BLOB_MIN_AREA,
            normalize: Normalize::None,
            path: None,
        }
    }

    /// Short description recorded in report provenance.
    pub fn describe(&self) -> String {
        match self.method {
            DetectMethod::Blob => format!(
                "blob(threshold={},min_area={},normalize={})",
                self.threshold,
                self.min_area,
                match self.normalize {
                    Normalize::None => "none",
                    Normalize::Slice => "slice",
                }
            ),
            DetectMethod::External => format!("external({})", self.path.as_deref().unwrap_or("")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default)]
    pub ssim: SsimParams,
    /// Ground-truth document; without one every detection is a false positive.
    #[serde(default)]
    pub ground_truth: Option<String>,
    #[serde(default = "default_iou")]
    pub iou_threshold: f64,
    #[serde(default)]
    pub confidence_threshold: f64,
}

fn default_iou() -> f64 {
    0.5
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            ssim: SsimParams::default(),
            ground_truth: None,
            iou_threshold: default_iou(),
            confidence_threshold: 0.0,
        }
    }
}

impl ChainConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(format!("chain config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chain config always serializes")
    }

    /// accumulate → recon → detect → report with the given recon and detector.
    pub fn standard(recon: ReconConfig, detect: DetectConfig, report: ReportConfig) -> Self {
        Self {
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            gadgets: vec![
                GadgetConfig::Accumulate(AccumulateConfig {}),
                GadgetConfig::Recon(recon),
                GadgetConfig::Detect(detect),
                GadgetConfig::Report(report),
            ],
        }
    }

    /// Checks the ordering rules and per-gadget parameters.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let rule = |msg: &str| Err(PipelineError::Config(msg.to_string()));
        let kinds: Vec<&str> = self.gadgets.iter().map(GadgetConfig::kind).collect();
        let count = |k: &str| kinds.iter().filter(|&&x| x == k).count();
        let pos = |k: &str| kinds.iter().position(|&x| x == k);
        if self.queue_capacity == 0 {
            return rule("queue_capacity must be at least 1");
        }
        if count("accumulate") != 1 || kinds.first() != Some(&"accumulate") {
            return rule("exactly one accumulate gadget, in first position");
        }
        if count("report") != 1 || kinds.last() != Some(&"report") {
            return rule("exactly one report gadget, in last position");
        }
        if count("recon") != 1 {
            return rule("exactly one recon gadget");
        }
        if count("detect") > 1 {
            return rule("at most one detect gadget");
        }
        if let (Some(r), Some(d)) = (pos("recon"), pos("detect")) {
            if d < r {
                return rule("recon must precede detect");
            }
        }
        for g in &self.gadgets {
            match g {
                GadgetConfig::Recon(r) => {
                    if r.method == ReconMethod::CgSense {
                        r.cg.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
                    }
                    if r.method == ReconMethod::External && r.image_dir.is_none() {
                        return rule("recon method external requires image_dir");
                    }
                    if let MaskSource::Policy { rate, .. } = r.mask {
                        if rate.is_nan() || rate < 1.0 {
                            return rule("mask policy rate must be >= 1");
                        }
                    }
                }
                GadgetConfig::Detect(d) => {
                    if d.method == DetectMethod::External && d.path.is_none() {
                        return rule("detect method external requires path");
                    }
                    if !d.threshold.is_finite() {
                        return rule("detect threshold must be finite");
                    }
                }
                GadgetConfig::Report(r) => {
                    if !(r.iou_threshold > 0.0 && r.iou_threshold <= 1.0) {
                        return rule("report iou_threshold must be in (0, 1]");
                    }
                }
                GadgetConfig::Accumulate(_) => {}
            }
        }
        Ok(())
    }
}
