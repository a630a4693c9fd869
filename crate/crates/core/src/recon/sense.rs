//! Iterative SENSE: Tikhonov-regularized least squares on the normal equations.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::{narrow, widen};
use super::operators::Encoding;
use super::ReconError;
use crate::model::{CoilSensitivityMaps, ComplexImage, KSpaceSlice, SamplingMask};
use crate::sampling::apply_mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgConfig {
    /// Tikhonov weight: the solver minimizes `‖f − A x‖² + λ‖x‖²`.
    pub lambda: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            max_iters: 50,
            rel_tol: 1e-6,
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<(), ReconError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(ReconError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.max_iters == 0 || self.max_iters > 10_000 {
            return Err(ReconError::Config(format!(
                "max_iters must be in 1..=10000, got {}",
                self.max_iters
            )));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(ReconError::Config(format!("rel_tol must be in (0, 1), got {}", self.rel_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgTrace {
    /// `‖r_k‖ / ‖r_0‖` after each iteration.
    pub residual_norms: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(u, v)| u.conj() * v).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Solves `(AᴴA + λI) x = Aᴴ f` from `x₀ = 0`.
///
/// The iteration is the conjugate-residual form of conjugate gradients: same
/// Krylov spaces and search directions conjugate in `(AᴴA + λI)²`, which makes
/// the recorded residual norms monotone.
pub fn cg_sense(
    f: &KSpaceSlice,
    mask: &SamplingMask,
    sens: &CoilSensitivityMaps,
    cfg: &CgConfig,
) -> Result<(ComplexImage, CgTrace), ReconError> {
    cfg.validate()?;
    if f.num_pe() != sens.rows() || f.num_ro() != sens.cols() || f.num_coils() != sens.num_coils() {
        return Err(ReconError::Shape(format!(
            "k-space is {}x{}x{}, maps are {}x{}x{}",
            f.num_coils(),
            f.num_pe(),
            f.num_ro(),
            sens.num_coils(),
            sens.rows(),
            sens.cols()
        )));
    }
    let op = Encoding::new(sens, mask)?;
    let f = apply_mask(f, mask)?;
    let b = op.adjoint(&widen(f.data()));
    let n = b.len();
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    let mut trace = CgTrace {
        residual_norms: Vec::new(),
        iterations_run: 0,
        converged: false,
    };

    let b_norm = norm(&b);
    if b_norm == 0.0 {
        trace.converged = true;
        return Ok((ComplexImage::zeros(f.slice_index(), f.num_pe(), f.num_ro()), trace));
    }

    let mut r = b;
    let mut p = r.clone();
    let mut ar = op.normal(&r, cfg.lambda);
    let mut ap = ar.clone();
    let mut r_ar = dot(&r, &ar).re;

    for it in 1..=cfg.max_iters {
        let ap_ap = ap.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let alpha = r_ar / ap_ap;
        if !alpha.is_finite() {
            return Err(ReconError::Divergence { iteration: it });
        }
        for ((xi, ri), (pi, api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
            *xi += pi * alpha;
            *ri -= api * alpha;
        }
        let rel = norm(&r) / b_norm;
        if !rel.is_finite() {
            return Err(ReconError::Divergence { iteration: it });
        }
        trace.residual_norms.push(rel);
        trace.iterations_run = it;
        if rel < cfg.rel_tol {
            trace.converged = true;
            break;
        }
        ar = op.normal(&r, cfg.lambda);
        let r_ar_next = dot(&r, &ar).re;
        let beta = r_ar_next / r_ar;
        if !beta.is_finite() {
            return Err(ReconError::Divergence { iteration: it });
        }
        r_ar = r_ar_next;
        for ((pi, api), (ri, ari)) in p.iter_mut().zip(ap.iter_mut()).zip(r.iter().zip(&ar)) {
            *pi = ri + *pi * beta;
            *api = ari + *api * beta;
        }
    }

    let image = ComplexImage::new(f.slice_index(), f.num_pe(), f.num_ro(), narrow(&x))?;
    Ok((image, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::{adjoint_operator, forward_operator};
    use crate::sampling::{generate_mask, MaskPolicy};
    use num_complex::Complex32;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_maps(coils: usize, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CoilSensitivityMaps {
        let n = rows * cols;
        let mut d: Vec<Complex32> = (0..coils * n)
            .map(|_| Complex32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        for p in 0..n {
            let rss: f32 = (0..coils).map(|c| d[c * n + p].norm_sqr()).sum::<f32>().sqrt();
            for c in 0..coils {
                d[c * n + p] /= rss;
            }
        }
        CoilSensitivityMaps::new(coils, rows, cols, d).unwrap()
    }

    fn random_image(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ComplexImage {
        ComplexImage::new(
            0,
            rows,
            cols,
            (0..rows * cols)
                .map(|_| Complex32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    fn rel_err(a: &[Complex32], b: &[Complex32]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr() as f64).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr() as f64).sum();
        (num / den).sqrt()
    }

    #[test]
    fn config_bounds() {
        assert!(CgConfig::default().validate().is_ok());
        assert!(CgConfig { rel_tol: 1.0, ..Default::default() }.validate().is_err());
        assert!(CgConfig { max_iters: 10_001, ..Default::default() }.validate().is_err());
        assert!(CgConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn full_sampling_recovers_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sens = random_maps(4, 16, 16, &mut rng);
        let x = random_image(16, 16, &mut rng);
        let mask = SamplingMask::full(16);
        let f = forward_operator(&x, &sens, &mask).unwrap();
        let cfg = CgConfig { lambda: 0.0, ..Default::default() };
        let (xh, trace) = cg_sense(&f, &mask, &sens, &cfg).unwrap();
        assert!(trace.converged);
        assert!(rel_err(xh.pixels(), x.pixels()).powi(2) < 1e-6);

        // with RSS-normalized maps AᴴA = I, so the solve equals the adjoint image
        let adj = adjoint_operator(&f, &sens, &mask).unwrap();
        assert!(rel_err(xh.pixels(), adj.pixels()) < 1e-6);
    }

    #[test]
    fn residuals_are_monotone_and_contract_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..10 {
            let sens = random_maps(3, 16, 12, &mut rng);
            let x = random_image(16, 12, &mut rng);
            let mask = generate_mask(16, &MaskPolicy { nominal_rate: 2.5, acs_fraction: 0.25, seed: trial }).unwrap();
            let f = forward_operator(&x, &sens, &mask).unwrap();
            let cfg = CgConfig { lambda: 0.001 * trial as f64, max_iters: 80, rel_tol: 1e-8 };
            let (_, trace) = cg_sense(&f, &mask, &sens, &cfg).unwrap();
            for w in trace.residual_norms.windows(2) {
                assert!(w[1] <= w[0] + 1e-10, "trial {trial}: {w:?}");
            }
            assert_eq!(trace.iterations_run, trace.residual_norms.len());
            if trace.converged {
                assert!(*trace.residual_norms.last().unwrap() < cfg.rel_tol);
            }
        }
    }

    #[test]
    fn tikhonov_shrinks_the_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sens = random_maps(2, 12, 12, &mut rng);
        let x = random_image(12, 12, &mut rng);
        let mask = generate_mask(12, &MaskPolicy { nominal_rate: 3.0, acs_fraction: 0.25, seed: 2 }).unwrap();
        let f = forward_operator(&x, &sens, &mask).unwrap();
        let norms: Vec<f64> = [0.0, 0.01, 0.1]
            .iter()
            .map(|&lambda| {
                let cfg = CgConfig { lambda, max_iters: 2000, rel_tol: 1e-10 };
                let (xh, _) = cg_sense(&f, &mask, &sens, &cfg).unwrap();
                xh.pixels().iter().map(|z| z.norm_sqr() as f64).sum::<f64>().sqrt()
            })
            .collect();
        assert!(norms[1] <= norms[0] && norms[2] <= norms[1], "{norms:?}");
    }

    #[test]
    fn zero_data_returns_zero_image() {
        let sens = CoilSensitivityMaps::uniform(8, 8);
        let f = KSpaceSlice::zeros(2, 1, 8, 8).unwrap();
        let (x, trace) = cg_sense(&f, &SamplingMask::full(8), &sens, &CgConfig::default()).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.iterations_run, 0);
        assert_eq!(x.slice_index, 2);
        assert!(x.pixels().iter().all(|z| z.norm() == 0.0));
    }
}
