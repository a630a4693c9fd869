//! Synthetic ellipse phantoms with disc lesions, smooth coil maps and noisy
//! multi-coil acquisitions.

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{BoundingBox, GroundTruthAnnotation};
use crate::model::{CoilSensitivityMaps, ComplexImage, KSpaceSlice, MagnitudeImage, ModelError, SamplingMask};
use crate::recon::{forward_operator, ReconError};
use crate::sampling::{apply_mask, slice_seed, SamplingError};

pub use crate::dataset::write_dataset;

/// Smallest lesion radius in pixels.
pub const MIN_LESION_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// Disc lesion in continuous pixel coordinates (pixel `(r, c)` covers
/// `[c, c+1) × [r, r+1)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub rows: usize,
    pub cols: usize,
    /// Interior ellipses drawn on top of the body ellipse.
    pub ellipses: usize,
    pub lesions: Vec<Lesion>,
    /// Complex noise std relative to the max modulus of the fully sampled center line.
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.ax).powi(2) + (v / self.ay).powi(2) <= 1.0
    }
}

fn body(rows: usize, cols: usize) -> Ellipse {
    Ellipse {
        cy: rows as f64 / 2.0,
        cx: cols as f64 / 2.0,
        ay: 0.44 * rows as f64,
        ax: 0.40 * cols as f64,
        angle: 0.0,
        value: 0.3,
    }
}

fn layout(spec: &PhantomSpec) -> Vec<Ellipse> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let outer = body(spec.rows, spec.cols);
    let mut shapes = vec![outer];
    for _ in 0..spec.ellipses {
        let r = rng.random_range(0.0..0.5);
        let t = rng.random_range(0.0..2.0 * PI);
        shapes.push(Ellipse {
            cy: outer.cy + r * outer.ay * t.sin(),
            cx: outer.cx + r * outer.ax * t.cos(),
            ay: rng.random_range(0.06..0.2) * spec.rows as f64,
            ax: rng.random_range(0.06..0.2) * spec.cols as f64,
            angle: rng.random_range(0.0..PI),
            value: rng.random_range(0.2..0.45),
        });
    }
    shapes
}

fn disc_pixels(lesion: &Lesion, rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let r2 = lesion.radius * lesion.radius;
    let r_lo = (lesion.y - lesion.radius).floor().max(0.0) as usize;
    let c_lo = (lesion.x - lesion.radius).floor().max(0.0) as usize;
    let r_hi = ((lesion.y + lesion.radius).ceil() as usize).min(rows);
    let c_hi = ((lesion.x + lesion.radius).ceil() as usize).min(cols);
    let mut out = Vec::new();
    for r in r_lo..r_hi {
        for c in c_lo..c_hi {
            let (dy, dx) = (r as f64 + 0.5 - lesion.y, c as f64 + 0.5 - lesion.x);
            if dx * dx + dy * dy <= r2 {
                out.push((r, c));
            }
        }
    }
    out
}

fn check_lesion(lesion: &Lesion, rows: usize, cols: usize, support: &Ellipse) -> Result<(), String> {
    if lesion.radius.is_nan() || lesion.radius < MIN_LESION_RADIUS {
        return Err(format!("lesion radius {} below {MIN_LESION_RADIUS}", lesion.radius));
    }
    if !(lesion.contrast > 0.0 && lesion.contrast <= 1.0) {
        return Err(format!("lesion contrast {} outside (0, 1]", lesion.contrast));
    }
    let inside = lesion.x - lesion.radius >= 0.0
        && lesion.y - lesion.radius >= 0.0
        && lesion.x + lesion.radius <= cols as f64
        && lesion.y + lesion.radius <= rows as f64;
    if !inside
        || disc_pixels(lesion, rows, cols)
            .iter()
            .any(|&(r, c)| !support.contains(r as f64 + 0.5, c as f64 + 0.5))
    {
        return Err(format!(
            "lesion at ({:.1}, {:.1}) radius {:.1} leaves the phantom support",
            lesion.x, lesion.y, lesion.radius
        ));
    }
    Ok(())
}

/// Renders the phantom and returns tight pixel-extent boxes around each lesion,
/// in the same order as `spec.lesions`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(MagnitudeImage, Vec<BoundingBox>), PhantomError> {
    let (rows, cols) = (spec.rows, spec.cols);
    if rows < 8 || cols < 8 || rows > u16::MAX as usize || cols > u16::MAX as usize {
        return Err(PhantomError::Spec(format!("image size {rows}x{cols} outside 8..=65535")));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(PhantomError::Spec(format!("noise sigma {} is negative", spec.noise_sigma)));
    }
    let shapes = layout(spec);
    for lesion in &spec.lesions {
        check_lesion(lesion, rows, cols, &shapes[0]).map_err(PhantomError::Spec)?;
    }

    let mut px = vec![0.0f64; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            if let Some(e) = shapes.iter().rev().find(|e| e.contains(y, x)) {
                px[r * cols + c] = e.value;
            }
        }
    }
    let mut boxes = Vec::with_capacity(spec.lesions.len());
    for lesion in &spec.lesions {
        let disc = disc_pixels(lesion, rows, cols);
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        for &(r, c) in &disc {
            let p = &mut px[r * cols + c];
            *p = (*p + lesion.contrast).min(1.0);
            r0 = r0.min(r);
            c0 = c0.min(c);
            r1 = r1.max(r);
            c1 = c1.max(c);
        }
        boxes.push(BoundingBox {
            x0: c0 as f64,
            y0: r0 as f64,
            x1: (c1 + 1) as f64,
            y1: (r1 + 1) as f64,
        });
    }
    let img = MagnitudeImage::new(0, rows, cols, px.into_iter().map(|v| v as f32).collect())?;
    Ok((img, boxes))
}

/// Gaussian-profile coils on a ring around the image with linear phase ramps,
/// normalized to unit root-sum-of-squares.
pub fn simulate_coil_maps(num_coils: usize, rows: usize, cols: usize) -> CoilSensitivityMaps {
    assert!(num_coils >= 1, "at least one coil");
    let (cy, cx) = (rows as f64 / 2.0, cols as f64 / 2.0);
    let scale = rows.max(cols) as f64;
    let ring = 0.7 * scale;
    let width = 0.5 * scale;
    let mut raw = vec![Complex64::new(0.0, 0.0); num_coils * rows * cols];
    for k in 0..num_coils {
        let theta = 2.0 * PI * k as f64 / num_coils as f64;
        let (ky, kx) = (cy + ring * theta.sin(), cx + ring * theta.cos());
        for r in 0..rows {
            for c in 0..cols {
                let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
                let d2 = (y - ky).powi(2) + (x - kx).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp();
                let phase = PI * (theta.cos() * (x - cx) + theta.sin() * (y - cy)) / scale;
                raw[(k * rows + r) * cols + c] = Complex64::from_polar(mag, phase);
            }
        }
    }
    let n = rows * cols;
    let mut data = vec![Complex32::new(0.0, 0.0); raw.len()];
    for p in 0..n {
        let rss = (0..num_coils).map(|k| raw[k * n + p].norm_sqr()).sum::<f64>().sqrt();
        for k in 0..num_coils {
            let v = raw[k * n + p] / rss;
            data[k * n + p] = Complex32::new(v.re as f32, v.im as f32);
        }
    }
    CoilSensitivityMaps::new(num_coils, rows, cols, data).expect("normalized maps are valid")
}

/// Fully sampled encoding of `img`, plus complex Gaussian noise, then masked.
///
/// The noise std (modulus) is `noise_sigma` times the max modulus of the fully
/// sampled center line across coils; each real component gets std/√2.
pub fn simulate_acquisition(
    img: &MagnitudeImage,
    sens: &CoilSensitivityMaps,
    mask: &SamplingMask,
    noise_sigma: f64,
    seed: u64,
) -> Result<KSpaceSlice, PhantomError> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(PhantomError::Spec(format!("noise sigma {noise_sigma} is negative")));
    }
    let x = ComplexImage::new(
        img.slice_index,
        img.rows(),
        img.cols(),
        img.pixels().iter().map(|&v| Complex32::new(v, 0.0)).collect(),
    )?;
    let full = forward_operator(&x, sens, &SamplingMask::full(img.rows()))?;
    let mut data = full.data().to_vec();
    if noise_sigma > 0.0 {
        let center = img.rows() / 2;
        let reference = (0..full.num_coils())
            .flat_map(|c| full.line(c, center).iter())
            .map(|z| z.norm())
            .fold(0.0f32, f32::max) as f64;
        let normal = Normal::new(0.0, noise_sigma * reference / 2f64.sqrt())
            .map_err(|e| PhantomError::Spec(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for z in &mut data {
            let (re, im) = (normal.sample(&mut rng), normal.sample(&mut rng));
            *z += Complex32::new(re as f32, im as f32);
        }
    }
    let noisy = KSpaceSlice::new(img.slice_index, full.num_coils(), full.num_pe(), full.num_ro(), data)?;
    Ok(apply_mask(&noisy, mask)?)
}

/// A multi-slice phantom acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSet {
    pub size: usize,
    pub coils: usize,
    pub slices: usize,
    /// Total lesions across the volume.
    pub lesions: usize,
    pub contrast: f64,
    pub noise_sigma: f64,
    pub ellipses: usize,
    pub seed: u64,
}

impl Default for PhantomSet {
    fn default() -> Self {
        Self {
            size: 128,
            coils: 8,
            slices: 16,
            lesions: 8,
            contrast: 0.35,
            noise_sigma: 0.002,
            ellipses: 5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedVolume {
    pub images: Vec<MagnitudeImage>,
    /// Fully sampled noisy k-space, one per slice.
    pub kspace: Vec<KSpaceSlice>,
    pub ground_truth: Vec<GroundTruthAnnotation>,
}

fn place_lesions(
    count: usize,
    rows: usize,
    cols: usize,
    contrast: f64,
    support: &Ellipse,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Lesion>, PhantomError> {
    let mut out: Vec<Lesion> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..10_000 {
            let radius = rng.random_range(2.5..4.5);
            let candidate = Lesion {
                x: rng.random_range(0.0..cols as f64),
                y: rng.random_range(0.0..rows as f64),
                radius,
                contrast,
            };
            let clear = out.iter().all(|o| {
                ((o.x - candidate.x).powi(2) + (o.y - candidate.y).powi(2)).sqrt() > o.radius + radius + 6.0
            });
            if clear && check_lesion(&candidate, rows, cols, support).is_ok() {
                out.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(PhantomError::Spec(format!("no room for {count} lesions on a {rows}x{cols} slice")));
        }
    }
    Ok(out)
}

/// Renders and acquires every slice of `set` at full sampling. Lesions are
/// spread evenly over the slices.
pub fn simulate_volume(set: &PhantomSet) -> Result<SimulatedVolume, PhantomError> {
    if set.slices == 0 || set.coils == 0 {
        return Err(PhantomError::Spec("slices and coils must be positive".into()));
    }
    if set.slices > u16::MAX as usize + 1 || set.coils > u16::MAX as usize {
        return Err(PhantomError::Spec("slice or coil count exceeds the wire format".into()));
    }
    let sens = simulate_coil_maps(set.coils, set.size, set.size);
    let support = body(set.size, set.size);
    let mut per_slice = vec![0usize; set.slices];
    for k in 0..set.lesions {
        per_slice[k * set.slices / set.lesions] += 1;
    }
    let mut images = Vec::with_capacity(set.slices);
    let mut kspace = Vec::with_capacity(set.slices);
    let mut ground_truth = Vec::new();
    for (s, &count) in per_slice.iter().enumerate() {
        let seed = slice_seed(set.seed, s as u32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lesions = place_lesions(count, set.size, set.size, set.contrast, &support, &mut rng)?;
        let spec = PhantomSpec {
            rows: set.size,
            cols: set.size,
            ellipses: set.ellipses,
            lesions,
            noise_sigma: set.noise_sigma,
            seed,
        };
        let (mut img, boxes) = generate_phantom(&spec)?;
        img.slice_index = s as u32;
        let f = simulate_acquisition(&img, &sens, &SamplingMask::full(set.size), set.noise_sigma, seed ^ 0x5eed)?;
        ground_truth.extend(boxes.into_iter().map(|bbox| GroundTruthAnnotation {
            slice_index: s as u32,
            bbox,
            class_id: 0,
        }));
        images.push(img);
        kspace.push(f);
    }
    Ok(SimulatedVolume {
        images,
        kspace,
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::nmse;
    use crate::recon::zero_fill_recon;
    use crate::sampling::{generate_mask, MaskPolicy};

    fn spec(lesions: Vec<Lesion>) -> PhantomSpec {
        PhantomSpec {
            rows: 64,
            cols: 64,
            ellipses: 4,
            lesions,
            noise_sigma: 0.0,
            seed: 3,
        }
    }

    fn lesion(x: f64, y: f64) -> Lesion {
        Lesion {
            x,
            y,
            radius: 3.0,
            contrast: 0.35,
        }
    }

    #[test]
    fn deterministic() {
        let s = spec(vec![lesion(30.0, 30.0)]);
        assert_eq!(generate_phantom(&s).unwrap(), generate_phantom(&s).unwrap());
    }

    #[test]
    fn no_lesions_no_boxes() {
        let (img, boxes) = generate_phantom(&spec(vec![])).unwrap();
        assert!(boxes.is_empty());
        assert!(img.pixels().iter().all(|&v| v == 0.0 || (0.2..=0.45).contains(&v)));
    }

    #[test]
    fn boxes_contain_centers() {
        let lesions = vec![lesion(30.0, 30.0), lesion(20.5, 40.2)];
        let (img, boxes) = generate_phantom(&spec(lesions.clone())).unwrap();
        for (l, b) in lesions.iter().zip(&boxes) {
            assert!(b.contains(l.x, l.y));
            assert!(b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= 64.0 && b.y1 <= 64.0);
            assert!(img.get(l.y as usize, l.x as usize) >= 0.55);
        }
    }

    #[test]
    fn lesion_outside_support_rejected() {
        assert!(matches!(generate_phantom(&spec(vec![lesion(2.0, 2.0)])), Err(PhantomError::Spec(_))));
        let small = Lesion {
            radius: 1.5,
            ..lesion(30.0, 30.0)
        };
        assert!(generate_phantom(&spec(vec![small])).is_err());
    }

    #[test]
    fn single_coil_map_is_unit_modulus() {
        let s = simulate_coil_maps(1, 16, 12);
        assert!(s.data().iter().all(|z| (z.norm() - 1.0).abs() < 1e-6));
    }

    #[test]
    fn maps_are_normalized_and_smooth() {
        let s = simulate_coil_maps(8, 128, 128);
        assert!(s.rss().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let mut worst = 0.0f32;
        for k in 0..8 {
            let m = s.coil(k);
            for r in 0..128 {
                for c in 0..128 {
                    if c + 1 < 128 {
                        worst = worst.max((m[r * 128 + c].norm() - m[r * 128 + c + 1].norm()).abs());
                    }
                    if r + 1 < 128 {
                        worst = worst.max((m[r * 128 + c].norm() - m[(r + 1) * 128 + c].norm()).abs());
                    }
                }
            }
        }
        assert!(worst < 0.05, "max adjacent difference {worst}");
    }

    #[test]
    fn noiseless_full_acquisition_round_trips() {
        let (img, _) = generate_phantom(&spec(vec![lesion(30.0, 30.0)])).unwrap();
        let sens = simulate_coil_maps(4, 64, 64);
        let f = simulate_acquisition(&img, &sens, &SamplingMask::full(64), 0.0, 1).unwrap();
        let recon = zero_fill_recon(&f, &SamplingMask::full(64)).unwrap();
        assert!(nmse(&img, &recon).unwrap() < 1e-10);
    }

    #[test]
    fn skipped_lines_are_zero_and_seed_reproduces() {
        let (img, _) = generate_phantom(&spec(vec![])).unwrap();
        let sens = simulate_coil_maps(2, 64, 64);
        let mask = generate_mask(64, &MaskPolicy::with_default_acs(4.0, 9)).unwrap();
        let a = simulate_acquisition(&img, &sens, &mask, 0.01, 5).unwrap();
        let b = simulate_acquisition(&img, &sens, &mask, 0.01, 5).unwrap();
        assert_eq!(a, b);
        for c in 0..2 {
            for pe in (0..64).filter(|&l| !mask.is_acquired(l)) {
                assert!(a.line(c, pe).iter().all(|z| z.re == 0.0 && z.im == 0.0));
            }
        }
        let c = simulate_acquisition(&img, &sens, &mask, 0.01, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_level_matches_sigma() {
        let (img, _) = generate_phantom(&spec(vec![])).unwrap();
        let sens = simulate_coil_maps(2, 64, 64);
        let full = SamplingMask::full(64);
        let clean = simulate_acquisition(&img, &sens, &full, 0.0, 0).unwrap();
        let noisy = simulate_acquisition(&img, &sens, &full, 0.05, 0).unwrap();
        let reference = (0..2)
            .flat_map(|c| clean.line(c, 32).iter())
            .map(|z| z.norm())
            .fold(0.0f32, f32::max) as f64;
        let n = clean.data().len() as f64;
        let var = clean
            .data()
            .iter()
            .zip(noisy.data())
            .map(|(a, b)| (b - a).norm_sqr() as f64)
            .sum::<f64>()
            / n;
        let expected = 0.05 * reference;
        assert!((var.sqrt() / expected - 1.0).abs() < 0.05);
    }

    #[test]
    fn volume_spreads_lesions() {
        let set = PhantomSet {
            size: 64,
            coils: 2,
            slices: 4,
            lesions: 2,
            ..PhantomSet::default()
        };
        let v = simulate_volume(&set).unwrap();
        assert_eq!(v.images.len(), 4);
        let slices: Vec<u32> = v.ground_truth.iter().map(|g| g.slice_index).collect();
        assert_eq!(slices, vec![0, 2]);
        assert_eq!(v.kspace[3].slice_index(), 3);
    }
}
