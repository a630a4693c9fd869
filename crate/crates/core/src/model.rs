//! Shared domain types: k-space slices, sampling masks, coil maps and images.
//!
//! Multi-coil buffers are stored coil-major, then row-major within a coil
//! (`coil × pe × ro`). Samples are 32-bit; numerics may accumulate in 64-bit.

use std::fmt;

use num_complex::Complex32;
use thiserror::Error;

/// Tolerance on the root-sum-of-squares of normalized coil maps.
pub const SENS_RSS_TOLERANCE: f32 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid k-space slice: {0}")]
    InvalidSlice(Violation),
    #[error("invalid sampling mask: {0}")]
    InvalidMask(String),
    #[error("invalid coil sensitivity maps: {0}")]
    InvalidSensitivities(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
}

/// The first invariant a k-space buffer breaks.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ZeroDimension,
    LengthMismatch { expected: usize, actual: usize },
    NonFinite { index: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroDimension => write!(f, "zero dimension"),
            Violation::LengthMismatch { expected, actual } => {
                write!(f, "length mismatch: expected {expected} samples, got {actual}")
            }
            Violation::NonFinite { index } => write!(f, "non-finite sample at index {index}"),
        }
    }
}

/// Checks raw slice parts against the [`KSpaceSlice`] invariants.
pub fn validate_parts(
    num_coils: usize,
    num_pe: usize,
    num_ro: usize,
    data: &[Complex32],
) -> Result<(), Violation> {
    if num_coils == 0 || num_pe == 0 || num_ro == 0 {
        return Err(Violation::ZeroDimension);
    }
    let expected = num_coils * num_pe * num_ro;
    if data.len() != expected {
        return Err(Violation::LengthMismatch {
            expected,
            actual: data.len(),
        });
    }
    if let Some(index) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Violation::NonFinite { index });
    }
    Ok(())
}

/// Re-checks an existing slice. Always `Ok` for slices built through
/// [`KSpaceSlice::new`].
pub fn validate_slice(slice: &KSpaceSlice) -> Result<(), Violation> {
    validate_parts(slice.num_coils, slice.num_pe, slice.num_ro, &slice.data)
}

/// Multi-coil k-space for one 2-D slice.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceSlice {
    slice_index: u32,
    num_coils: usize,
    num_pe: usize,
    num_ro: usize,
    data: Vec<Complex32>,
}

impl KSpaceSlice {
    pub fn new(
        slice_index: u32,
        num_coils: usize,
        num_pe: usize,
        num_ro: usize,
        data: Vec<Complex32>,
    ) -> Result<Self, ModelError> {
        validate_parts(num_coils, num_pe, num_ro, &data).map_err(ModelError::InvalidSlice)?;
        Ok(Self {
            slice_index,
            num_coils,
            num_pe,
            num_ro,
            data,
        })
    }

    pub fn zeros(slice_index: u32, num_coils: usize, num_pe: usize, num_ro: usize) -> Result<Self, ModelError> {
        Self::new(
            slice_index,
            num_coils,
            num_pe,
            num_ro,
            vec![Complex32::new(0.0, 0.0); num_coils * num_pe * num_ro],
        )
    }

    pub fn slice_index(&self) -> u32 {
        self.slice_index
    }

    pub fn num_coils(&self) -> usize {
        self.num_coils
    }

    pub fn num_pe(&self) -> usize {
        self.num_pe
    }

    pub fn num_ro(&self) -> usize {
        self.num_ro
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Complex32> {
        self.data
    }

    /// Samples of one coil, row-major.
    pub fn coil(&self, coil: usize) -> &[Complex32] {
        let n = self.num_pe * self.num_ro;
        &self.data[coil * n..(coil + 1) * n]
    }

    /// One phase-encode line of one coil.
    pub fn line(&self, coil: usize, pe: usize) -> &[Complex32] {
        let start = (coil * self.num_pe + pe) * self.num_ro;
        &self.data[start..start + self.num_ro]
    }

    pub fn with_slice_index(mut self, slice_index: u32) -> Self {
        self.slice_index = slice_index;
        self
    }

    /// Sum of squared sample moduli, accumulated in f64.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| (z.norm_sqr()) as f64).sum()
    }
}

/// Per-phase-encode-line acquisition pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    acquired: Vec<bool>,
    acs_range: Option<(usize, usize)>,
    nominal_rate: f64,
}

impl SamplingMask {
    /// `acs_range` is inclusive on both ends.
    pub fn new(
        acquired: Vec<bool>,
        acs_range: Option<(usize, usize)>,
        nominal_rate: f64,
    ) -> Result<Self, ModelError> {
        let num_pe = acquired.len();
        if num_pe == 0 {
            return Err(ModelError::InvalidMask("empty mask".into()));
        }
        if !(nominal_rate.is_finite() && nominal_rate > 0.0) {
            return Err(ModelError::InvalidMask(format!(
                "nominal rate {nominal_rate} is not positive"
            )));
        }
        if let Some((lo, hi)) = acs_range {
            if lo > hi || hi >= num_pe {
                return Err(ModelError::InvalidMask(format!(
                    "ACS range [{lo}, {hi}] outside 0..{num_pe}"
                )));
            }
            if let Some(line) = (lo..=hi).find(|&l| !acquired[l]) {
                return Err(ModelError::InvalidMask(format!(
                    "ACS line {line} not acquired"
                )));
            }
        }
        let count = acquired.iter().filter(|&&a| a).count();
        if count == 0 {
            return Err(ModelError::InvalidMask("no line acquired".into()));
        }
        if nominal_rate > 1.0 {
            let target = num_pe as f64 / nominal_rate;
            if (count as f64 - target).abs() > 1.0 {
                return Err(ModelError::InvalidMask(format!(
                    "{count} acquired lines is more than one line away from {target:.2} (R={nominal_rate})"
                )));
            }
        }
        Ok(Self {
            acquired,
            acs_range,
            nominal_rate,
        })
    }

    /// Every line acquired, R = 1.
    pub fn full(num_pe: usize) -> Self {
        Self {
            acquired: vec![true; num_pe],
            acs_range: Some((0, num_pe - 1)),
            nominal_rate: 1.0,
        }
    }

    /// Mask realized from a set of acquired lines; the nominal rate is the achieved one.
    pub fn from_lines(
        num_pe: usize,
        lines: impl IntoIterator<Item = usize>,
        acs_range: Option<(usize, usize)>,
    ) -> Result<Self, ModelError> {
        let mut acquired = vec![false; num_pe];
        for l in lines {
            if l >= num_pe {
                return Err(ModelError::InvalidMask(format!(
                    "line {l} outside 0..{num_pe}"
                )));
            }
            acquired[l] = true;
        }
        let count = acquired.iter().filter(|&&a| a).count();
        let rate = if count == 0 { 1.0 } else { num_pe as f64 / count as f64 };
        Self::new(acquired, acs_range, rate)
    }

    pub fn num_pe(&self) -> usize {
        self.acquired.len()
    }

    pub fn acquired(&self) -> &[bool] {
        &self.acquired
    }

    pub fn is_acquired(&self, line: usize) -> bool {
        self.acquired[line]
    }

    pub fn acs_range(&self) -> Option<(usize, usize)> {
        self.acs_range
    }

    pub fn acs_count(&self) -> usize {
        self.acs_range.map_or(0, |(lo, hi)| hi - lo + 1)
    }

    pub fn is_acs(&self, line: usize) -> bool {
        self.acs_range.is_some_and(|(lo, hi)| (lo..=hi).contains(&line))
    }

    pub fn nominal_rate(&self) -> f64 {
        self.nominal_rate
    }

    pub fn acquired_count(&self) -> usize {
        self.acquired.iter().filter(|&&a| a).count()
    }

    pub fn achieved_rate(&self) -> f64 {
        self.num_pe() as f64 / self.acquired_count() as f64
    }

    pub fn is_full(&self) -> bool {
        self.acquired.iter().all(|&a| a)
    }

    pub fn acquired_lines(&self) -> impl Iterator<Item = usize> + '_ {
        self.acquired
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
    }

    /// One `0`/`1` character per line.
    pub fn to_bit_string(&self) -> String {
        self.acquired.iter().map(|&a| if a { '1' } else { '0' }).collect()
    }
}

/// Complex receive-coil sensitivities, same layout as [`KSpaceSlice`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSensitivityMaps {
    num_coils: usize,
    rows: usize,
    cols: usize,
    data: Vec<Complex32>,
}

impl CoilSensitivityMaps {
    pub fn new(num_coils: usize, rows: usize, cols: usize, data: Vec<Complex32>) -> Result<Self, ModelError> {
        validate_parts(num_coils, rows, cols, &data)
            .map_err(|v| ModelError::InvalidSensitivities(v.to_string()))?;
        let n = rows * cols;
        for p in 0..n {
            let rss: f32 = (0..num_coils)
                .map(|c| data[c * n + p].norm_sqr())
                .sum::<f32>()
                .sqrt();
            if rss > 1.0 + SENS_RSS_TOLERANCE {
                return Err(ModelError::InvalidSensitivities(format!(
                    "root-sum-of-squares {rss} exceeds 1 at pixel {p}"
                )));
            }
        }
        Ok(Self {
            num_coils,
            rows,
            cols,
            data,
        })
    }

    /// Unit sensitivity for a single coil.
    pub fn uniform(rows: usize, cols: usize) -> Self {
        Self {
            num_coils: 1,
            rows,
            cols,
            data: vec![Complex32::new(1.0, 0.0); rows * cols],
        }
    }

    pub fn num_coils(&self) -> usize {
        self.num_coils
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn coil(&self, coil: usize) -> &[Complex32] {
        let n = self.rows * self.cols;
        &self.data[coil * n..(coil + 1) * n]
    }

    /// Per-pixel root-sum-of-squares across coils.
    pub fn rss(&self) -> Vec<f32> {
        let n = self.rows * self.cols;
        (0..n)
            .map(|p| {
                (0..self.num_coils)
                    .map(|c| self.data[c * n + p].norm_sqr() as f64)
                    .sum::<f64>()
                    .sqrt() as f32
            })
            .collect()
    }
}

/// Complex image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    pub slice_index: u32,
    rows: usize,
    cols: usize,
    pixels: Vec<Complex32>,
}

impl ComplexImage {
    pub fn new(slice_index: u32, rows: usize, cols: usize, pixels: Vec<Complex32>) -> Result<Self, ModelError> {
        if rows == 0 || cols == 0 {
            return Err(ModelError::InvalidImage("zero dimension".into()));
        }
        if pixels.len() != rows * cols {
            return Err(ModelError::InvalidImage(format!(
                "length mismatch: expected {} pixels, got {}",
                rows * cols,
                pixels.len()
            )));
        }
        Ok(Self {
            slice_index,
            rows,
            cols,
            pixels,
        })
    }

    pub fn zeros(slice_index: u32, rows: usize, cols: usize) -> Self {
        Self {
            slice_index,
            rows,
            cols,
            pixels: vec![Complex32::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[Complex32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<Complex32> {
        self.pixels
    }

    pub fn magnitude(&self) -> MagnitudeImage {
        MagnitudeImage {
            slice_index: self.slice_index,
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels.iter().map(|z| z.norm()).collect(),
        }
    }
}

/// Non-negative real image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeImage {
    pub slice_index: u32,
    rows: usize,
    cols: usize,
    pixels: Vec<f32>,
}

impl MagnitudeImage {
    pub fn new(slice_index: u32, rows: usize, cols: usize, pixels: Vec<f32>) -> Result<Self, ModelError> {
        if rows == 0 || cols == 0 {
            return Err(ModelError::InvalidImage("zero dimension".into()));
        }
        if pixels.len() != rows * cols {
            return Err(ModelError::InvalidImage(format!(
                "length mismatch: expected {} pixels, got {}",
                rows * cols,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(ModelError::InvalidImage(format!(
                "pixel {i} is negative or non-finite"
            )));
        }
        Ok(Self {
            slice_index,
            rows,
            cols,
            pixels,
        })
    }

    pub fn zeros(slice_index: u32, rows: usize, cols: usize) -> Self {
        Self {
            slice_index,
            rows,
            cols,
            pixels: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.cols + col]
    }

    pub fn max(&self) -> f32 {
        self.pixels.iter().copied().fold(0.0, f32::max)
    }

    /// Multiplies every pixel by a non-negative factor.
    pub fn scaled(&self, factor: f32) -> MagnitudeImage {
        MagnitudeImage {
            slice_index: self.slice_index,
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels.iter().map(|p| p * factor).collect(),
        }
    }
}

/// Scales an image so its maximum is 1. An all-zero image is returned unchanged.
pub fn normalize_magnitude(img: &MagnitudeImage) -> MagnitudeImage {
    let max = img.max();
    if max > 0.0 {
        MagnitudeImage {
            pixels: img.pixels.iter().map(|p| p / max).collect(),
            ..img.clone()
        }
    } else {
        img.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f32, im: f32) -> Complex32 {
        Complex32::new(re, im)
    }

    #[test]
    fn well_formed_slice_validates() {
        let s = KSpaceSlice::new(0, 2, 8, 8, vec![c(1.0, -1.0); 128]).unwrap();
        assert_eq!(validate_slice(&s), Ok(()));
        assert_eq!(s.line(1, 3).len(), 8);
    }

    #[test]
    fn short_buffer_reports_length_mismatch() {
        let v = validate_parts(2, 8, 8, &vec![c(0.0, 0.0); 127]).unwrap_err();
        assert!(v.to_string().starts_with("length mismatch"));
        assert!(KSpaceSlice::new(0, 2, 8, 8, vec![c(0.0, 0.0); 127]).is_err());
    }

    #[test]
    fn nan_sample_reports_non_finite() {
        let mut data = vec![c(0.0, 0.0); 128];
        data[17] = c(f32::NAN, 0.0);
        let v = validate_parts(2, 8, 8, &data).unwrap_err();
        assert_eq!(v, Violation::NonFinite { index: 17 });
        assert!(v.to_string().starts_with("non-finite sample"));
    }

    #[test]
    fn normalize_examples() {
        let img = MagnitudeImage::new(0, 1, 3, vec![0.0, 2.0, 4.0]).unwrap();
        assert_eq!(normalize_magnitude(&img).pixels(), &[0.0, 0.5, 1.0]);
        let zero = MagnitudeImage::zeros(0, 2, 2);
        assert_eq!(normalize_magnitude(&zero), zero);
        let unit = MagnitudeImage::new(0, 1, 3, vec![0.25, 1.0, 0.5]).unwrap();
        assert_eq!(normalize_magnitude(&unit), unit);
    }

    #[test]
    fn mask_rejects_unacquired_acs() {
        let err = SamplingMask::new(vec![true, false, true, true], Some((0, 1)), 1.0).unwrap_err();
        assert!(err.to_string().contains("ACS line 1"));
        assert!(SamplingMask::new(vec![false; 4], None, 1.0).is_err());
        // 8 lines at R=4 should keep 2 +- 1 lines
        assert!(SamplingMask::new(vec![true; 8], None, 4.0).is_err());
        assert!(SamplingMask::new(
            vec![true, false, false, true, false, true, false, false],
            None,
            4.0
        )
        .is_ok());
    }

    #[test]
    fn sensitivity_rss_bound() {
        let ok = CoilSensitivityMaps::new(2, 1, 1, vec![c(0.6, 0.0), c(0.0, 0.8)]);
        assert!(ok.is_ok());
        let bad = CoilSensitivityMaps::new(2, 1, 1, vec![c(1.0, 0.0), c(0.0, 0.1)]);
        assert!(bad.is_err());
    }

    #[test]
    fn magnitude_rejects_negative() {
        assert!(MagnitudeImage::new(0, 1, 2, vec![0.0, -1.0]).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_is_idempotent_and_keeps_argmax(pixels in proptest::collection::vec(0.0f32..100.0, 1..64)) {
                let n = pixels.len();
                let img = MagnitudeImage::new(0, 1, n, pixels).unwrap();
                let once = normalize_magnitude(&img);
                let twice = normalize_magnitude(&once);
                for (a, b) in once.pixels().iter().zip(twice.pixels()) {
                    prop_assert!((a - b).abs() <= 1e-6);
                }
                let argmax = |im: &MagnitudeImage| {
                    let m = im.max();
                    im.pixels().iter().position(|&p| p == m).unwrap()
                };
                prop_assert_eq!(argmax(&img), argmax(&once));
            }

            #[test]
            fn constructed_slices_validate(coils in 1usize..4, pe in 1usize..8, ro in 1usize..8, v in -10.0f32..10.0) {
                let s = KSpaceSlice::new(0, coils, pe, ro, vec![Complex32::new(v, -v); coils * pe * ro]).unwrap();
                prop_assert!(validate_slice(&s).is_ok());
            }
        }
    }
}
