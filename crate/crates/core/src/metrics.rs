//! Global image-quality metrics: NMSE and windowed SSIM.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::MagnitudeImage;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid metric parameters: {0}")]
    Parameter(String),
    #[error("metric undefined: {0}")]
    Undefined(String),
}

/// Uniform-window SSIM parameters. `data_range: None` means "take it from the
/// reference" (slice max for [`ssim`], volume max for [`volume_metrics`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    #[serde(default)]
    pub data_range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            data_range: None,
        }
    }
}

fn check_shapes(a: &MagnitudeImage, b: &MagnitudeImage) -> Result<(), MetricError> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(MetricError::Shape(format!(
            "{}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// `‖test − ref‖² / ‖ref‖²`
pub fn nmse(reference: &MagnitudeImage, test: &MagnitudeImage) -> Result<f64, MetricError> {
    check_shapes(reference, test)?;
    let (num, den) = reference
        .pixels()
        .iter()
        .zip(test.pixels())
        .fold((0.0f64, 0.0f64), |(num, den), (&r, &t)| {
            let (r, t) = (r as f64, t as f64);
            (num + (t - r) * (t - r), den + r * r)
        });
    if den == 0.0 {
        return Err(MetricError::Undefined("reference image has zero norm".into()));
    }
    Ok(num / den)
}

/// Mean SSIM over every window position fully inside the image, with
/// sample (n−1) window variances.
pub fn ssim(reference: &MagnitudeImage, test: &MagnitudeImage, p: &SsimParams) -> Result<f64, MetricError> {
    check_shapes(reference, test)?;
    let w = p.window;
    if w == 0 || w.is_multiple_of(2) {
        return Err(MetricError::Parameter(format!("window {w} must be odd and positive")));
    }
    let (rows, cols) = (reference.rows(), reference.cols());
    if w > rows.min(cols) {
        return Err(MetricError::Parameter(format!(
            "window {w} larger than image {rows}x{cols}"
        )));
    }
    if !(p.k1 > 0.0 && p.k2 > 0.0) {
        return Err(MetricError::Parameter("k1 and k2 must be positive".into()));
    }
    let range = p.data_range.unwrap_or(reference.max() as f64);
    if !(range > 0.0 && range.is_finite()) {
        return Err(MetricError::Parameter(format!("data_range {range} must be positive")));
    }
    let c1 = (p.k1 * range).powi(2);
    let c2 = (p.k2 * range).powi(2);
    let np = (w * w) as f64;

    let x = reference.pixels();
    let y = test.pixels();
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=rows - w {
        for c0 in 0..=cols - w {
            let (mut sx, mut sy) = (0.0f64, 0.0f64);
            for r in r0..r0 + w {
                for c in c0..c0 + w {
                    sx += x[r * cols + c] as f64;
                    sy += y[r * cols + c] as f64;
                }
            }
            let (ux, uy) = (sx / np, sy / np);
            let (mut vx, mut vy, mut vxy) = (0.0f64, 0.0f64, 0.0f64);
            for r in r0..r0 + w {
                for c in c0..c0 + w {
                    let dx = x[r * cols + c] as f64 - ux;
                    let dy = y[r * cols + c] as f64 - uy;
                    vx += dx * dx;
                    vy += dy * dy;
                    vxy += dx * dy;
                }
            }
            let norm = np - 1.0;
            let (vx, vy, vxy) = (vx / norm, vy / norm, vxy / norm);
            total += ((2.0 * ux * uy + c1) * (2.0 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-slice metrics over a reference/test volume pair.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeMetrics {
    /// SSIM data range actually used.
    pub data_range: f64,
    pub ssim: Vec<f64>,
    /// `None` where the reference slice is all zero.
    pub nmse: Vec<Option<f64>>,
}

impl VolumeMetrics {
    pub fn mean_ssim(&self) -> Option<f64> {
        (!self.ssim.is_empty()).then(|| self.ssim.iter().sum::<f64>() / self.ssim.len() as f64)
    }
}

/// SSIM uses one data range for the whole volume: the configured one, or the
/// reference volume maximum.
pub fn volume_metrics(
    references: &[MagnitudeImage],
    tests: &[MagnitudeImage],
    p: &SsimParams,
) -> Result<VolumeMetrics, MetricError> {
    if references.len() != tests.len() {
        return Err(MetricError::Shape(format!(
            "{} reference slices vs {} test slices",
            references.len(),
            tests.len()
        )));
    }
    let data_range = p
        .data_range
        .unwrap_or_else(|| references.iter().map(|r| r.max() as f64).fold(0.0, f64::max));
    let params = SsimParams {
        data_range: Some(data_range),
        ..*p
    };
    let mut out = VolumeMetrics {
        data_range,
        ssim: Vec::with_capacity(references.len()),
        nmse: Vec::with_capacity(references.len()),
    };
    for (r, t) in references.iter().zip(tests) {
        out.ssim.push(ssim(r, t, &params)?);
        out.nmse.push(match nmse(r, t) {
            Ok(v) => Some(v),
            Err(MetricError::Undefined(_)) => None,
            Err(e) => return Err(e),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(rows: usize, cols: usize, px: Vec<f32>) -> MagnitudeImage {
        MagnitudeImage::new(0, rows, cols, px).unwrap()
    }

    fn random(rows: usize, cols: usize, seed: u64) -> MagnitudeImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        img(rows, cols, (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect())
    }

    #[test]
    fn nmse_examples() {
        let r = random(8, 8, 1);
        assert_eq!(nmse(&r, &r).unwrap(), 0.0);
        let doubled = r.scaled(2.0);
        assert!((nmse(&r, &doubled).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            nmse(&MagnitudeImage::zeros(0, 2, 2), &MagnitudeImage::zeros(0, 2, 2)),
            Err(MetricError::Undefined(_))
        ));
    }

    #[test]
    fn nmse_matches_double_loop() {
        let a = random(8, 8, 2);
        let b = random(8, 8, 3);
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for r in 0..8 {
            for c in 0..8 {
                let d = b.get(r, c) as f64 - a.get(r, c) as f64;
                num += d * d;
                den += (a.get(r, c) as f64).powi(2);
            }
        }
        assert!((nmse(&a, &b).unwrap() - num / den).abs() < 1e-9);
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = random(16, 16, 4);
        assert!((ssim(&a, &a, &SsimParams::default()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_closed_form() {
        let a = img(8, 8, vec![1.0; 64]);
        let b = img(8, 8, vec![0.5; 64]);
        let p = SsimParams {
            data_range: Some(1.0),
            ..Default::default()
        };
        let expected = (2.0 * 0.5 + 1e-4) / (1.0 + 0.25 + 1e-4);
        assert!((ssim(&a, &b, &p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_drops_with_noise() {
        let a = random(16, 16, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noisy = img(
            16,
            16,
            a.pixels().iter().map(|p| p + rng.random_range(0.0..0.1f32)).collect(),
        );
        assert!(ssim(&a, &noisy, &SsimParams::default()).unwrap() < 1.0);
    }

    #[test]
    fn ssim_window_errors() {
        let a = random(5, 9, 7);
        assert!(matches!(ssim(&a, &a, &SsimParams::default()), Err(MetricError::Parameter(_))));
        let p = SsimParams { window: 4, ..Default::default() };
        assert!(ssim(&a, &a, &p).is_err());
        assert!(ssim(&a, &random(5, 8, 1), &SsimParams { window: 3, ..Default::default() }).is_err());
    }

    #[test]
    fn volume_uses_reference_volume_max() {
        let r1 = img(7, 7, vec![0.5; 49]);
        let r2 = img(7, 7, vec![2.0; 49]);
        let v = volume_metrics(&[r1.clone(), r2.clone()], &[r1, r2], &SsimParams::default()).unwrap();
        assert_eq!(v.data_range, 2.0);
        assert_eq!(v.mean_ssim(), Some(1.0));
        assert_eq!(v.nmse, vec![Some(0.0), Some(0.0)]);
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_bounded(seed_a in any::<u64>(), seed_b in any::<u64>()) {
            let a = random(10, 12, seed_a);
            let b = random(10, 12, seed_b);
            let p = SsimParams { data_range: Some(1.0), ..Default::default() };
            let ab = ssim(&a, &b, &p).unwrap();
            let ba = ssim(&b, &a, &p).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!(nmse(&a, &b).unwrap() >= 0.0);
        }
    }
}
