//! Greedy IoU matching of detections to ground truth.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::types::{BoundingBox, Detection, GroundTruthAnnotation};

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let h = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    (inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0)
}

/// Match counts for one slice (all classes).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SliceOutcome {
    pub slice_index: u32,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `(detection index, ground-truth index)` into the caller's sequences.
    pub matches: Vec<(usize, usize)>,
}

/// Descending confidence, then ascending `x0`, `y0`, then input order.
fn detection_order(dets: &[Detection], a: usize, b: usize) -> Ordering {
    let (da, db) = (&dets[a], &dets[b]);
    db.confidence
        .total_cmp(&da.confidence)
        .then(da.bbox.x0.total_cmp(&db.bbox.x0))
        .then(da.bbox.y0.total_cmp(&db.bbox.y0))
        .then(a.cmp(&b))
}

/// Per slice and class, each detection in confidence order claims the
/// unmatched ground truth with the highest IoU at or above the threshold.
/// Returns one outcome per slice that has a detection or a ground truth,
/// ordered by slice index.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthAnnotation],
    iou_threshold: f64,
) -> Vec<SliceOutcome> {
    let mut groups: BTreeMap<(u32, u16), (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        groups.entry((d.slice_index, d.class_id)).or_default().0.push(i);
    }
    for (j, g) in gts.iter().enumerate() {
        groups.entry((g.slice_index, g.class_id)).or_default().1.push(j);
    }

    let mut outcomes: BTreeMap<u32, SliceOutcome> = BTreeMap::new();
    for ((slice, _class), (mut det_ids, gt_ids)) in groups {
        det_ids.sort_by(|&a, &b| detection_order(dets, a, b));
        let mut taken = vec![false; gt_ids.len()];
        let out = outcomes.entry(slice).or_insert_with(|| SliceOutcome {
            slice_index: slice,
            ..Default::default()
        });
        for &d in &det_ids {
            let mut best: Option<(usize, f64)> = None;
            for (k, &g) in gt_ids.iter().enumerate() {
                if taken[k] {
                    continue;
                }
                let v = iou(&dets[d].bbox, &gts[g].bbox);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((k, v));
                }
            }
            match best {
                Some((k, _)) => {
                    taken[k] = true;
                    out.tp += 1;
                    out.matches.push((d, gt_ids[k]));
                }
                None => out.fp += 1,
            }
        }
        out.fn_ += taken.iter().filter(|&&t| !t).count();
    }
    outcomes.into_values().collect()
}
