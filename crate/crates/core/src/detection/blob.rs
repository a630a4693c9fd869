//! Threshold + connected-component detector used as the reference lesion finder.

use super::types::{BoundingBox, Detection};
use crate::model::MagnitudeImage;

/// 4-connected components of pixels strictly above `intensity_threshold`,
/// at least `min_area` pixels each, as tight pixel-extent boxes.
///
/// Confidence is the component's mean intensity (clamped to `[0, 1]`). Output
/// is sorted by descending confidence, then ascending `x0`, then `y0`.
pub fn blob_detect(img: &MagnitudeImage, intensity_threshold: f64, min_area: usize) -> Vec<Detection> {
    let (rows, cols) = (img.rows(), img.cols());
    let px = img.pixels();
    let mut label = vec![false; rows * cols];
    let mut found = Vec::new();
    let mut stack = Vec::new();

    for start in 0..rows * cols {
        if label[start] || (px[start] as f64) <= intensity_threshold {
            continue;
        }
        label[start] = true;
        stack.push(start);
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        let (mut area, mut sum) = (0usize, 0.0f64);
        while let Some(p) = stack.pop() {
            let (r, c) = (p / cols, p % cols);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
            area += 1;
            sum += px[p] as f64;
            let mut visit = |q: usize| {
                if !label[q] && (px[q] as f64) > intensity_threshold {
                    label[q] = true;
                    stack.push(q);
                }
            };
            if r > 0 {
                visit(p - cols);
            }
            if r + 1 < rows {
                visit(p + cols);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < cols {
                visit(p + 1);
            }
        }
        if area >= min_area {
            let bbox = BoundingBox {
                x0: c0 as f64,
                y0: r0 as f64,
                x1: (c1 + 1) as f64,
                y1: (r1 + 1) as f64,
            };
            found.push(Detection {
                slice_index: img.slice_index,
                bbox,
                confidence: (sum / area as f64).clamp(0.0, 1.0),
                class_id: 0,
            });
        }
    }
    found.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.bbox.x0.total_cmp(&b.bbox.x0))
            .then(a.bbox.y0.total_cmp(&b.bbox.y0))
    });
    found
}
