//! Retrospective 1-D phase-encode undersampling.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{KSpaceSlice, ModelError, SamplingMask};

/// Name of the generator behind every seeded draw in this crate.
pub const RNG_NAME: &str = "ChaCha8Rng";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("invalid mask policy: {0}")]
    InvalidPolicy(String),
    #[error("shape mismatch: mask has {mask} lines, slice has {slice}")]
    Shape { mask: usize, slice: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskPolicy {
    pub nominal_rate: f64,
    pub acs_fraction: f64,
    pub seed: u64,
}

impl MaskPolicy {
    /// Policy with the conventional ACS fraction for the rate (8% up to R=4, 4% above).
    pub fn with_default_acs(nominal_rate: f64, seed: u64) -> Self {
        Self {
            nominal_rate,
            acs_fraction: default_acs_fraction(nominal_rate),
            seed,
        }
    }

    /// Same policy, reseeded for one slice.
    pub fn for_slice(&self, slice_index: u32) -> Self {
        Self {
            seed: slice_seed(self.seed, slice_index),
            ..*self
        }
    }
}

pub fn default_acs_fraction(nominal_rate: f64) -> f64 {
    if nominal_rate > 4.0 {
        0.04
    } else {
        0.08
    }
}

/// Per-slice seed derived from a global seed (splitmix64 finalizer).
pub fn slice_seed(global: u64, slice_index: u32) -> u64 {
    let mut z = global
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((slice_index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Inclusive ACS interval of `count` lines centered on `num_pe / 2`; for an even
/// count the extra line falls on the low-index side.
pub fn acs_interval(num_pe: usize, count: usize) -> (usize, usize) {
    let center = num_pe / 2;
    let lo = center - count / 2;
    (lo, lo + count - 1)
}

pub fn generate_mask(num_pe: usize, policy: &MaskPolicy) -> Result<SamplingMask, SamplingError> {
    let MaskPolicy {
        nominal_rate,
        acs_fraction,
        seed,
    } = *policy;
    if num_pe < 4 {
        return Err(SamplingError::InvalidPolicy(format!("num_pe >= 4 violated (num_pe = {num_pe})")));
    }
    if !(nominal_rate.is_finite() && nominal_rate >= 1.0) {
        return Err(SamplingError::InvalidPolicy(format!(
            "nominal_rate >= 1 violated (nominal_rate = {nominal_rate})"
        )));
    }
    if !(acs_fraction > 0.0 && acs_fraction <= 1.0) {
        return Err(SamplingError::InvalidPolicy(format!(
            "acs_fraction in (0, 1] violated (acs_fraction = {acs_fraction})"
        )));
    }
    let acs = (num_pe as f64 * acs_fraction).ceil() as usize;
    let budget = (num_pe as f64 / nominal_rate).floor() as usize;
    if acs > budget {
        return Err(SamplingError::InvalidPolicy(format!(
            "ceil(num_pe * acs_fraction) <= floor(num_pe / nominal_rate) violated ({acs} > {budget})"
        )));
    }
    let target = ((num_pe as f64 / nominal_rate).round() as usize).max(acs);

    let (lo, hi) = acs_interval(num_pe, acs);
    let mut acquired = vec![false; num_pe];
    acquired[lo..=hi].iter_mut().for_each(|a| *a = true);

    let outer: Vec<usize> = (0..num_pe).filter(|l| !(lo..=hi).contains(l)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pick in index::sample(&mut rng, outer.len(), target - acs) {
        acquired[outer[pick]] = true;
    }
    Ok(SamplingMask::new(acquired, Some((lo, hi)), nominal_rate)?)
}

/// Zeroes every skipped phase-encode line across all coils.
pub fn apply_mask(slice: &KSpaceSlice, mask: &SamplingMask) -> Result<KSpaceSlice, SamplingError> {
    if mask.num_pe() != slice.num_pe() {
        return Err(SamplingError::Shape {
            mask: mask.num_pe(),
            slice: slice.num_pe(),
        });
    }
    let ro = slice.num_ro();
    let pe = slice.num_pe();
    let mut data = slice.data().to_vec();
    for (row_index, row) in data.chunks_exact_mut(ro).enumerate() {
        if !mask.is_acquired(row_index % pe) {
            row.fill(num_complex::Complex32::new(0.0, 0.0));
        }
    }
    Ok(KSpaceSlice::new(slice.slice_index(), slice.num_coils(), pe, ro, data)?)
}
