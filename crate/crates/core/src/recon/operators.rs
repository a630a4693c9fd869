//! The multi-coil Cartesian encoding operator, its adjoint, and
//! root-sum-of-squares reconstruction.

use num_complex::Complex64;

use super::fft::{fft2c, narrow, widen, Direction, Fft2Plan};
use super::ReconError;
use crate::model::{CoilSensitivityMaps, ComplexImage, KSpaceSlice, MagnitudeImage, SamplingMask};
use crate::sampling::apply_mask;

/// `A = M F S` in f64, with the transform plans cached.
pub(crate) struct Encoding {
    plan: Fft2Plan,
    sens: Vec<Complex64>,
    acquired: Vec<bool>,
    coils: usize,
}

impl Encoding {
    pub(crate) fn new(sens: &CoilSensitivityMaps, mask: &SamplingMask) -> Result<Self, ReconError> {
        if mask.num_pe() != sens.rows() {
            return Err(ReconError::Shape(format!(
                "mask has {} lines, maps have {} rows",
                mask.num_pe(),
                sens.rows()
            )));
        }
        Ok(Self {
            plan: Fft2Plan::new(sens.rows(), sens.cols()),
            sens: widen(sens.data()),
            acquired: mask.acquired().to_vec(),
            coils: sens.num_coils(),
        })
    }

    pub(crate) fn pixels(&self) -> usize {
        self.plan.rows() * self.plan.cols()
    }

    fn zero_skipped(&self, buf: &mut [Complex64]) {
        let cols = self.plan.cols();
        for (row, line) in buf.chunks_exact_mut(cols).enumerate() {
            if !self.acquired[row] {
                line.fill(Complex64::new(0.0, 0.0));
            }
        }
    }

    pub(crate) fn forward(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.pixels();
        let mut out = vec![Complex64::new(0.0, 0.0); self.coils * n];
        for (c, coil_out) in out.chunks_exact_mut(n).enumerate() {
            let s = &self.sens[c * n..(c + 1) * n];
            for ((o, si), xi) in coil_out.iter_mut().zip(s).zip(x) {
                *o = si * xi;
            }
            self.plan.transform(coil_out, Direction::Forward);
            self.zero_skipped(coil_out);
        }
        out
    }

    pub(crate) fn adjoint(&self, k: &[Complex64]) -> Vec<Complex64> {
        let n = self.pixels();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..self.coils {
            buf.copy_from_slice(&k[c * n..(c + 1) * n]);
            self.zero_skipped(&mut buf);
            self.plan.transform(&mut buf, Direction::Inverse);
            let s = &self.sens[c * n..(c + 1) * n];
            for ((o, si), bi) in out.iter_mut().zip(s).zip(&buf) {
                *o += si.conj() * bi;
            }
        }
        out
    }

    /// `(AᴴA + λI) x`
    pub(crate) fn normal(&self, x: &[Complex64], lambda: f64) -> Vec<Complex64> {
        let mut out = self.adjoint(&self.forward(x));
        if lambda != 0.0 {
            for (o, xi) in out.iter_mut().zip(x) {
                *o += xi * lambda;
            }
        }
        out
    }
}

fn check_image_shape(rows: usize, cols: usize, sens: &CoilSensitivityMaps) -> Result<(), ReconError> {
    if rows != sens.rows() || cols != sens.cols() {
        return Err(ReconError::Shape(format!(
            "image is {rows}x{cols}, maps are {}x{}",
            sens.rows(),
            sens.cols()
        )));
    }
    Ok(())
}

/// Per coil: `mask ⊙ F(sens_c ⊙ x)`.
pub fn forward_operator(
    x: &ComplexImage,
    sens: &CoilSensitivityMaps,
    mask: &SamplingMask,
) -> Result<KSpaceSlice, ReconError> {
    check_image_shape(x.rows(), x.cols(), sens)?;
    let op = Encoding::new(sens, mask)?;
    let k = op.forward(&widen(x.pixels()));
    Ok(KSpaceSlice::new(
        x.slice_index,
        sens.num_coils(),
        sens.rows(),
        sens.cols(),
        narrow(&k),
    )?)
}

/// `Σ_c conj(sens_c) ⊙ F⁻¹(mask ⊙ f_c)`.
pub fn adjoint_operator(
    f: &KSpaceSlice,
    sens: &CoilSensitivityMaps,
    mask: &SamplingMask,
) -> Result<ComplexImage, ReconError> {
    check_image_shape(f.num_pe(), f.num_ro(), sens)?;
    if f.num_coils() != sens.num_coils() {
        return Err(ReconError::Shape(format!(
            "k-space has {} coils, maps have {}",
            f.num_coils(),
            sens.num_coils()
        )));
    }
    let op = Encoding::new(sens, mask)?;
    let x = op.adjoint(&widen(f.data()));
    Ok(ComplexImage::new(f.slice_index(), f.num_pe(), f.num_ro(), narrow(&x))?)
}

pub fn rss_combine(coil_images: &[ComplexImage]) -> Result<MagnitudeImage, ReconError> {
    let first = coil_images
        .first()
        .ok_or_else(|| ReconError::Shape("no coil images to combine".into()))?;
    let (rows, cols) = (first.rows(), first.cols());
    if let Some(bad) = coil_images.iter().find(|c| c.rows() != rows || c.cols() != cols) {
        return Err(ReconError::Shape(format!(
            "coil image is {}x{}, expected {rows}x{cols}",
            bad.rows(),
            bad.cols()
        )));
    }
    let pixels = (0..rows * cols)
        .map(|p| {
            coil_images
                .iter()
                .map(|c| c.pixels()[p].norm_sqr() as f64)
                .sum::<f64>()
                .sqrt() as f32
        })
        .collect();
    Ok(MagnitudeImage::new(first.slice_index, rows, cols, pixels)?)
}

/// Coil-wise centered inverse transforms of the raw k-space.
pub fn coil_images(f: &KSpaceSlice) -> Vec<ComplexImage> {
    (0..f.num_coils())
        .map(|c| {
            let k = ComplexImage::new(f.slice_index(), f.num_pe(), f.num_ro(), f.coil(c).to_vec())
                .expect("coil buffer matches slice shape");
            fft2c(&k, Direction::Inverse)
        })
        .collect()
}

pub fn zero_fill_recon(f: &KSpaceSlice, mask: &SamplingMask) -> Result<MagnitudeImage, ReconError> {
    let masked = apply_mask(f, mask)?;
    rss_combine(&coil_images(&masked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{generate_mask, MaskPolicy};
    use num_complex::Complex32;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_c(rng: &mut ChaCha8Rng) -> Complex32 {
        Complex32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn random_image(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ComplexImage {
        ComplexImage::new(0, rows, cols, (0..rows * cols).map(|_| rand_c(rng)).collect()).unwrap()
    }

    #[test]
    fn single_unit_coil_full_mask_is_plain_fourier() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_image(6, 8, &mut rng);
        let sens = CoilSensitivityMaps::uniform(6, 8);
        let k = forward_operator(&x, &sens, &SamplingMask::full(6)).unwrap();
        assert_eq!(k.data(), fft2c(&x, Direction::Forward).pixels());

        let back = adjoint_operator(&k, &sens, &SamplingMask::full(6)).unwrap();
        let direct = fft2c(
            &ComplexImage::new(0, 6, 8, k.data().to_vec()).unwrap(),
            Direction::Inverse,
        );
        assert_eq!(back.pixels(), direct.pixels());
    }

    #[test]
    fn zero_inputs_give_zero_outputs() {
        let sens = CoilSensitivityMaps::uniform(4, 4);
        let mask = SamplingMask::full(4);
        let k = forward_operator(&ComplexImage::zeros(0, 4, 4), &sens, &mask).unwrap();
        assert!(k.data().iter().all(|z| z.norm() == 0.0));
        let x = adjoint_operator(&KSpaceSlice::zeros(0, 1, 4, 4).unwrap(), &sens, &mask).unwrap();
        assert!(x.pixels().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn rss_examples() {
        let a = ComplexImage::new(0, 1, 2, vec![Complex32::new(3.0, 4.0), Complex32::new(0.0, -2.0)]).unwrap();
        let single = rss_combine(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.pixels(), &[5.0, 2.0]);

        let double = rss_combine(&[a.clone(), a]).unwrap();
        assert!((double.pixels()[0] - 5.0 * 2f32.sqrt()).abs() < 1e-6);

        assert!(rss_combine(&[]).is_err());
        let odd = ComplexImage::zeros(0, 2, 1);
        assert!(rss_combine(&[ComplexImage::zeros(0, 1, 2), odd]).is_err());
    }

    #[test]
    fn rss_matches_per_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let coils: Vec<_> = (0..3).map(|_| random_image(8, 8, &mut rng)).collect();
        let out = rss_combine(&coils).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let mut acc = 0.0f64;
                for img in &coils {
                    let z = img.pixels()[r * 8 + c];
                    acc += (z.re as f64).powi(2) + (z.im as f64).powi(2);
                }
                assert!((out.get(r, c) as f64 - acc.sqrt()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_fill_full_mask_is_reference_and_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let data = (0..2 * 8 * 8).map(|_| rand_c(&mut rng)).collect();
        let f = KSpaceSlice::new(3, 2, 8, 8, data).unwrap();
        let full = SamplingMask::full(8);
        let zf = zero_fill_recon(&f, &full).unwrap();
        let reference = rss_combine(&coil_images(&f)).unwrap();
        assert_eq!(zf, reference);
        assert_eq!(zf.slice_index, 3);

        let alpha = 2.5f32;
        let scaled = KSpaceSlice::new(3, 2, 8, 8, f.data().iter().map(|z| z * alpha).collect()).unwrap();
        let zs = zero_fill_recon(&scaled, &full).unwrap();
        for (a, b) in zs.pixels().iter().zip(zf.pixels()) {
            assert!((a - alpha * b).abs() <= 1e-5 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn shape_errors() {
        let sens = CoilSensitivityMaps::uniform(4, 4);
        let mask = SamplingMask::full(4);
        assert!(forward_operator(&ComplexImage::zeros(0, 4, 5), &sens, &mask).is_err());
        assert!(forward_operator(&ComplexImage::zeros(0, 4, 4), &sens, &SamplingMask::full(5)).is_err());
        let f = KSpaceSlice::zeros(0, 2, 4, 4).unwrap();
        assert!(adjoint_operator(&f, &sens, &mask).is_err());
    }

    #[test]
    fn adjoint_identity_on_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (rows, cols, coils) = (12, 12, 3);
        let sens_data: Vec<Complex32> = (0..coils * rows * cols).map(|_| rand_c(&mut rng) * 0.5).collect();
        // the identity does not depend on normalization, but the type does
        let n = rows * cols;
        let mut normalized = sens_data.clone();
        for p in 0..n {
            let rss: f32 = (0..coils).map(|c| sens_data[c * n + p].norm_sqr()).sum::<f32>().sqrt();
            for c in 0..coils {
                normalized[c * n + p] = sens_data[c * n + p] / rss.max(1.0);
            }
        }
        let sens = CoilSensitivityMaps::new(coils, rows, cols, normalized).unwrap();
        let mask = generate_mask(rows, &MaskPolicy { nominal_rate: 3.0, acs_fraction: 0.2, seed: 5 }).unwrap();
        let x = random_image(rows, cols, &mut rng);
        let y = KSpaceSlice::new(0, coils, rows, cols, (0..coils * n).map(|_| rand_c(&mut rng)).collect()).unwrap();

        let ax = forward_operator(&x, &sens, &mask).unwrap();
        let ahy = adjoint_operator(&y, &sens, &mask).unwrap();
        let dot = |a: &[Complex32], b: &[Complex32]| -> Complex64 {
            a.iter()
                .zip(b)
                .map(|(u, v)| Complex64::new(u.re as f64, -u.im as f64) * Complex64::new(v.re as f64, v.im as f64))
                .sum()
        };
        let lhs = dot(ax.data(), y.data());
        let rhs = dot(x.pixels(), ahy.pixels());
        let norm = |a: &[Complex32]| a.iter().map(|z| z.norm_sqr() as f64).sum::<f64>().sqrt();
        assert!((lhs - rhs).norm() <= 1e-5 * norm(x.pixels()) * norm(y.data()));
    }
}
