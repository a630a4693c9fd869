//! The four built-in gadgets.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use super::accumulate::{DatasetHeader, SliceAssembler};
use super::config::{ChainConfig, DetectConfig, DetectMethod, GadgetConfig, Normalize, ReconConfig, ReconMethod, ReportConfig};
use super::runtime::{Gadget, Item, ReconImage};
use super::PipelineError;
use crate::detection::{
    blob_detect, evaluate, load_external_detections, load_ground_truth, Detection, EvaluationConfig,
    GroundTruthAnnotation, MetricsDocument, Provenance, SliceMetrics,
};
use crate::metrics::{volume_metrics, SsimParams};
use crate::model::{normalize_magnitude, KSpaceSlice, SamplingMask};
use crate::pgm::{read_pgm, slice_file_name};
use crate::recon::{cg_sense, estimate_sensitivities, zero_fill_recon, CgConfig};
use crate::sampling::{generate_mask, MaskPolicy, RNG_NAME};
use crate::wire::GadgetMessage;

pub struct AccumulateGadget {
    assembler: Option<SliceAssembler>,
}

impl AccumulateGadget {
    pub fn new() -> Self {
        Self { assembler: None }
    }
}

impl Default for AccumulateGadget {
    fn default() -> Self {
        Self::new()
    }
}

impl Gadget for AccumulateGadget {
    fn name(&self) -> &'static str {
        "accumulate"
    }

    fn process(&mut self, item: Item, out: &mut Vec<Item>) -> Result<(), PipelineError> {
        match item {
            Item::Message(GadgetMessage::Config(text)) => {
                if self.assembler.is_some() {
                    return Err(PipelineError::Protocol("second config message".into()));
                }
                self.assembler = Some(SliceAssembler::new(DatasetHeader::from_json(&text)?));
            }
            Item::Message(GadgetMessage::Acquisition(acq)) => {
                let assembler = self
                    .assembler
                    .as_mut()
                    .ok_or_else(|| PipelineError::Protocol("acquisition before config".into()))?;
                if let Some((kspace, mask)) = assembler.push(acq)? {
                    out.push(Item::Slice { kspace, mask });
                }
            }
            Item::Message(other) => {
                return Err(PipelineError::Protocol(format!(
                    "unexpected {} message in the input stream",
                    other.kind()
                )))
            }
            other => out.push(other),
        }
        Ok(())
    }

    fn flush(&mut self, out: &mut Vec<Item>) -> Result<(), PipelineError> {
        let assembler = self
            .assembler
            .take()
            .ok_or_else(|| PipelineError::Protocol("stream ended before a config message".into()))?;
        for (kspace, mask) in assembler.finish()? {
            out.push(Item::Slice { kspace, mask });
        }
        Ok(())
    }
}

pub struct ReconGadget {
    cfg: ReconConfig,
    policy: Option<MaskPolicy>,
}

impl ReconGadget {
    pub fn new(cfg: ReconConfig) -> Self {
        let policy = cfg.mask.policy();
        Self { cfg, policy }
    }

    fn reconstruct(&self, kspace: KSpaceSlice, realized: SamplingMask) -> Result<ReconImage, PipelineError> {
        let slice = kspace.slice_index();
        let reference = if realized.is_full() {
            Some(zero_fill_recon(&kspace, &realized)?)
        } else {
            None
        };
        let mask = match &self.policy {
            None => realized,
            Some(policy) => {
                if !realized.is_full() {
                    return Err(PipelineError::Protocol(format!(
                        "slice {slice}: a mask policy needs fully sampled input, {} of {} lines arrived",
                        realized.acquired_count(),
                        realized.num_pe()
                    )));
                }
                generate_mask(kspace.num_pe(), &policy.for_slice(slice))?
            }
        };
        let (image, trace) = match self.cfg.method {
            ReconMethod::ZeroFill => (zero_fill_recon(&kspace, &mask)?, None),
            ReconMethod::CgSense => {
                let sens = estimate_sensitivities(&crate::sampling::apply_mask(&kspace, &mask)?, &mask)?;
                let (x, trace) = cg_sense(&kspace, &mask, &sens, &self.cfg.cg)?;
                log::debug!(
                    "slice {slice}: cg_sense {} iterations, final residual {:?}",
                    trace.iterations_run,
                    trace.residual_norms.last()
                );
                (x.magnitude(), Some(trace))
            }
            ReconMethod::External => {
                let dir = PathBuf::from(self.cfg.image_dir.as_deref().unwrap_or("."));
                let img = read_pgm(&dir.join(slice_file_name(slice)), slice)
                    .map_err(|e| PipelineError::Io(e.to_string()))?;
                if img.rows() != kspace.num_pe() || img.cols() != kspace.num_ro() {
                    return Err(PipelineError::Protocol(format!(
                        "external image for slice {slice} is {}x{}, k-space is {}x{}",
                        img.rows(),
                        img.cols(),
                        kspace.num_pe(),
                        kspace.num_ro()
                    )));
                }
                (img, None)
            }
        };
        let mut image = image;
        image.slice_index = slice;
        Ok(ReconImage {
            image,
            reference,
            mask,
            trace,
        })
    }
}

impl Gadget for ReconGadget {
    fn name(&self) -> &'static str {
        "recon"
    }

    fn process(&mut self, item: Item, out: &mut Vec<Item>) -> Result<(), PipelineError> {
        match item {
            Item::Slice { kspace, mask } => out.push(Item::Image(self.reconstruct(kspace, mask)?)),
            other => out.push(other),
        }
        Ok(())
    }

    fn flush(&mut self, _out: &mut Vec<Item>) -> Result<(), PipelineError> {
        Ok(())
    }
}

pub struct DetectGadget {
    cfg: DetectConfig,
    external: BTreeMap<u32, Vec<Detection>>,
}

impl DetectGadget {
    pub fn new(cfg: DetectConfig) -> Result<Self, PipelineError> {
        let mut external: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
        if cfg.method == DetectMethod::External {
            let path = cfg.path.as_deref().unwrap_or_default();
            let text = fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("{path}: {e}")))?;
            for d in load_external_detections(&text)? {
                external.entry(d.slice_index).or_default().push(d);
            }
        }
        Ok(Self { cfg, external })
    }
}

impl Gadget for DetectGadget {
    fn name(&self) -> &'static str {
        "detect"
    }

    fn process(&mut self, item: Item, out: &mut Vec<Item>) -> Result<(), PipelineError> {
        let Item::Image(r) = item else {
            out.push(item);
            return Ok(());
        };
        let slice_index = r.image.slice_index;
        let detections = match self.cfg.method {
            DetectMethod::Blob => match self.cfg.normalize {
                Normalize::None => blob_detect(&r.image, self.cfg.threshold, self.cfg.min_area),
                Normalize::Slice => blob_detect(&normalize_magnitude(&r.image), self.cfg.threshold, self.cfg.min_area),
            },
            DetectMethod::External => self.external.remove(&slice_index).unwrap_or_default(),
        };
        out.push(Item::Image(r));
        out.push(Item::Detections {
            slice_index,
            detections,
        });
        Ok(())
    }

    fn flush(&mut self, _out: &mut Vec<Item>) -> Result<(), PipelineError> {
        Ok(())
    }
}

/// Chain-wide facts the report records regardless of which slices arrive.
#[derive(Debug, Clone)]
pub(crate) struct RunSummary {
    method: String,
    policy: Option<MaskPolicy>,
    cg: Option<CgConfig>,
    detector: Option<String>,
}

impl RunSummary {
    pub(crate) fn from_config(cfg: &ChainConfig) -> Self {
        let mut s = RunSummary {
            method: String::new(),
            policy: None,
            cg: None,
            detector: None,
        };
        for g in &cfg.gadgets {
            match g {
                GadgetConfig::Recon(r) => {
                    s.method = r.method.name().to_string();
                    s.policy = r.mask.policy();
                    s.cg = (r.method == ReconMethod::CgSense).then_some(r.cg);
                }
                GadgetConfig::Detect(d) => s.detector = Some(d.describe()),
                _ => {}
            }
        }
        s
    }
}

pub struct ReportGadget {
    cfg: ReportConfig,
    summary: RunSummary,
    ground_truth: Vec<GroundTruthAnnotation>,
    slices: BTreeMap<u32, ReconImage>,
    detections: Vec<Detection>,
}

impl ReportGadget {
    pub(crate) fn new(cfg: ReportConfig, summary: RunSummary) -> Result<Self, PipelineError> {
        let ground_truth = match &cfg.ground_truth {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("{path}: {e}")))?;
                load_ground_truth(&text)?
            }
            None => Vec::new(),
        };
        Ok(Self {
            cfg,
            summary,
            ground_truth,
            slices: BTreeMap::new(),
            detections: Vec::new(),
        })
    }

    fn metrics_document(&self) -> Result<MetricsDocument, PipelineError> {
        let ssim_params: SsimParams = self.cfg.ssim;
        let with_ref: Vec<&ReconImage> = self
            .slices
            .values()
            .filter(|r| r.reference.is_some())
            .collect();
        let mut per_slice: BTreeMap<u32, (f64, Option<f64>)> = BTreeMap::new();
        let mut data_range = None;
        if !with_ref.is_empty() {
            let refs: Vec<_> = with_ref.iter().map(|r| r.reference.clone().expect("filtered")).collect();
            let tests: Vec<_> = with_ref.iter().map(|r| r.image.clone()).collect();
            let vm = volume_metrics(&refs, &tests, &ssim_params)?;
            data_range = Some(vm.data_range);
            for ((r, s), n) in with_ref.iter().zip(vm.ssim).zip(vm.nmse) {
                per_slice.insert(r.image.slice_index, (s, n));
            }
        }
        let slices: Vec<SliceMetrics> = self
            .slices
            .iter()
            .map(|(&slice, c)| {
                let m = per_slice.get(&slice);
                SliceMetrics {
                    slice,
                    ssim: m.map(|v| v.0),
                    nmse: m.and_then(|v| v.1),
                    mask: Some(c.mask.to_bit_string()),
                }
            })
            .collect();
        let rate = match &self.summary.policy {
            Some(p) => Some(p.nominal_rate),
            None if self.slices.is_empty() => None,
            None => Some(
                self.slices.values().map(|c| c.mask.achieved_rate()).sum::<f64>() / self.slices.len() as f64,
            ),
        };
        Ok(MetricsDocument {
            method: Some(self.summary.method.clone()),
            rate,
            data_range,
            provenance: Provenance {
                rng: self.summary.policy.map(|_| RNG_NAME.to_string()),
                mask_seed: self.summary.policy.map(|p| p.seed),
                acs_fraction: self.summary.policy.map(|p| p.acs_fraction),
                cg: self.summary.cg,
                ssim: Some(ssim_params),
                detector: self.summary.detector.clone(),
                iou_threshold: None,
                confidence_threshold: None,
            },
            slices,
        })
    }
}

impl Gadget for ReportGadget {
    fn name(&self) -> &'static str {
        "report"
    }

    fn process(&mut self, item: Item, out: &mut Vec<Item>) -> Result<(), PipelineError> {
        match &item {
            Item::Image(r) => {
                self.slices.insert(r.image.slice_index, r.clone());
            }
            Item::Detections { detections, .. } => self.detections.extend_from_slice(detections),
            _ => {}
        }
        out.push(item);
        Ok(())
    }

    fn flush(&mut self, out: &mut Vec<Item>) -> Result<(), PipelineError> {
        let doc = self.metrics_document()?;
        let cfg = EvaluationConfig {
            iou_threshold: self.cfg.iou_threshold,
            confidence_threshold: self.cfg.confidence_threshold,
        };
        // Annotations for slices this session never delivered are not scored.
        let ground_truth: Vec<_> = self
            .ground_truth
            .iter()
            .filter(|g| doc.slices.iter().any(|s| s.slice == g.slice_index))
            .copied()
            .collect();
        let report = evaluate(Some(&doc), &self.detections, &ground_truth, &cfg)?;
        out.push(Item::Metrics(doc));
        out.push(Item::Message(GadgetMessage::Report(report.to_json())));
        Ok(())
    }
}
