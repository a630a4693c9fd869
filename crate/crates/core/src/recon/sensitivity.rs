//! Coil sensitivity estimation from the fully sampled calibration block.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::fft::{narrow, widen, Direction, Fft2Plan};
use super::ReconError;
use crate::model::{CoilSensitivityMaps, KSpaceSlice, SamplingMask};

/// Fewest calibration lines the estimator accepts.
pub const MIN_ACS_LINES: usize = 4;

/// Hann taper over `n` lines, without the zero end points.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * PI * (k + 1) as f64 / (n + 1) as f64).cos())
        .collect()
}

/// Low-resolution maps from the Hann-apodized ACS block, normalized by their
/// root-sum-of-squares (plus `1e-8 × max RSS`).
pub fn estimate_sensitivities(f: &KSpaceSlice, mask: &SamplingMask) -> Result<CoilSensitivityMaps, ReconError> {
    if mask.num_pe() != f.num_pe() {
        return Err(ReconError::Shape(format!(
            "mask has {} lines, k-space has {}",
            mask.num_pe(),
            f.num_pe()
        )));
    }
    let (lo, hi) = match mask.acs_range() {
        Some(r) if r.1 - r.0 + 1 >= MIN_ACS_LINES => r,
        _ => {
            return Err(ReconError::Estimation(format!(
                "{} ACS lines, at least {MIN_ACS_LINES} required",
                mask.acs_count()
            )))
        }
    };
    let (rows, cols, coils) = (f.num_pe(), f.num_ro(), f.num_coils());
    let n = rows * cols;
    let window = hann(hi - lo + 1);
    let plan = Fft2Plan::new(rows, cols);

    let mut maps = vec![Complex64::new(0.0, 0.0); coils * n];
    for c in 0..coils {
        let buf = &mut maps[c * n..(c + 1) * n];
        for (line, w) in (lo..=hi).zip(&window) {
            let src = widen(f.line(c, line));
            for (dst, s) in buf[line * cols..(line + 1) * cols].iter_mut().zip(src) {
                *dst = s * *w;
            }
        }
        plan.transform(buf, Direction::Inverse);
    }

    let rss: Vec<f64> = (0..n)
        .map(|p| (0..coils).map(|c| maps[c * n + p].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let max_rss = rss.iter().copied().fold(0.0, f64::max);
    if max_rss == 0.0 {
        return Err(ReconError::Estimation("calibration block carries no signal".into()));
    }
    let eps = 1e-8 * max_rss;
    for c in 0..coils {
        for (m, r) in maps[c * n..(c + 1) * n].iter_mut().zip(&rss) {
            *m /= r + eps;
        }
    }
    Ok(CoilSensitivityMaps::new(coils, rows, cols, narrow(&maps))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ComplexImage;
    use crate::recon::forward_operator;
    use num_complex::Complex32;

    fn blob(rows: usize, cols: usize) -> ComplexImage {
        let px = (0..rows * cols)
            .map(|p| {
                let (r, c) = ((p / cols) as f32 - rows as f32 / 2.0, (p % cols) as f32 - cols as f32 / 2.0);
                Complex32::new((-(r * r + c * c) / 40.0).exp(), 0.0)
            })
            .collect();
        ComplexImage::new(0, rows, cols, px).unwrap()
    }

    #[test]
    fn hann_is_symmetric_and_positive() {
        let w = hann(6);
        assert!(w.iter().all(|&v| v > 0.0 && v <= 1.0));
        for k in 0..6 {
            assert!((w[k] - w[5 - k]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_unit_coil_estimates_unit_modulus_on_signal() {
        let x = blob(32, 32);
        let k = forward_operator(&x, &CoilSensitivityMaps::uniform(32, 32), &SamplingMask::full(32)).unwrap();
        let mask = SamplingMask::from_lines(32, 12..20, Some((12, 19))).unwrap();
        let est = estimate_sensitivities(&k, &mask).unwrap();
        let rss = est.rss();
        let before = x.magnitude().into_pixels();
        let max = before.iter().copied().fold(0.0, f32::max);
        for (p, v) in before.iter().enumerate() {
            if *v > 0.05 * max {
                assert!((est.data()[p].norm() - 1.0).abs() < 1e-3, "pixel {p}");
                assert!((rss[p] - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn too_few_acs_lines() {
        let k = KSpaceSlice::zeros(0, 1, 16, 16).unwrap();
        let mask = SamplingMask::from_lines(16, [2, 7, 8, 9, 13], Some((7, 9))).unwrap();
        assert!(matches!(estimate_sensitivities(&k, &mask), Err(ReconError::Estimation(_))));
        let no_acs = SamplingMask::from_lines(16, [1, 3, 5, 7], None).unwrap();
        assert!(estimate_sensitivities(&k, &no_acs).is_err());
    }
}
