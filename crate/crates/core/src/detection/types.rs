use serde::{Deserialize, Serialize};

use super::DetectionError;

/// Axis-aligned box in pixel coordinates, corner convention; `y` runs along rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, String> {
        if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(format!("box ({x0}, {y0}, {x1}, {y1}) has non-finite coordinates"));
        }
        if !(x0 < x1 && y0 < y1) {
            return Err(format!("box ({x0}, {y0}, {x1}, {y1}) has non-positive area"));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub slice_index: u32,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub class_id: u16,
}

impl Detection {
    pub fn new(slice_index: u32, bbox: BoundingBox, confidence: f64, class_id: u16) -> Result<Self, String> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(format!("confidence {confidence} outside [0, 1]"));
        }
        Ok(Self {
            slice_index,
            bbox,
            confidence,
            class_id,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthAnnotation {
    pub slice_index: u32,
    pub bbox: BoundingBox,
    pub class_id: u16,
}

/// One JSON record of a detections or ground-truth document.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Record {
    slice: u32,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(default)]
    class: u16,
}

fn parse_records(document: &str) -> Result<Vec<Record>, DetectionError> {
    serde_json::from_str(document).map_err(|e| DetectionError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Parses a detections document. Records must carry a confidence.
pub fn load_external_detections(document: &str) -> Result<Vec<Detection>, DetectionError> {
    parse_records(document)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let invalid = |message: String| DetectionError::Validation { record: i, message };
            let bbox = BoundingBox::new(r.x0, r.y0, r.x1, r.y1).map_err(invalid)?;
            let confidence = r
                .confidence
                .ok_or_else(|| invalid("missing field `confidence`".into()))?;
            Detection::new(r.slice, bbox, confidence, r.class).map_err(invalid)
        })
        .collect()
}

/// Parses a ground-truth document; any `confidence` field is ignored.
pub fn load_ground_truth(document: &str) -> Result<Vec<GroundTruthAnnotation>, DetectionError> {
    parse_records(document)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let bbox = BoundingBox::new(r.x0, r.y0, r.x1, r.y1)
                .map_err(|message| DetectionError::Validation { record: i, message })?;
            Ok(GroundTruthAnnotation {
                slice_index: r.slice,
                bbox,
                class_id: r.class,
            })
        })
        .collect()
}

fn to_json(records: Vec<Record>) -> String {
    serde_json::to_string_pretty(&records).expect("records always serialize")
}

pub fn detections_to_json(dets: &[Detection]) -> String {
    to_json(
        dets.iter()
            .map(|d| Record {
                slice: d.slice_index,
                x0: d.bbox.x0,
                y0: d.bbox.y0,
                x1: d.bbox.x1,
                y1: d.bbox.y1,
                confidence: Some(d.confidence),
                class: d.class_id,
            })
            .collect(),
    )
}

pub fn ground_truth_to_json(gts: &[GroundTruthAnnotation]) -> String {
    to_json(
        gts.iter()
            .map(|g| Record {
                slice: g.slice_index,
                x0: g.bbox.x0,
                y0: g.bbox.y0,
                x1: g.bbox.x1,
                y1: g.bbox.y1,
                confidence: None,
                class: g.class_id,
            })
            .collect(),
    )
}
