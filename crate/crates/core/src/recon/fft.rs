//! Centered, orthonormal 2-D DFT.
//!
//! DC sits at `(rows / 2, cols / 2)` in both domains and the transform is
//! scaled by `1 / sqrt(rows * cols)`, so it is unitary.

use std::sync::Arc;

use num_complex::{Complex32, Complex64};
use rustfft::{Fft, FftPlanner};

use crate::model::ComplexImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Cached 1-D plans for one image shape. Works on f64 buffers.
pub struct Fft2Plan {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl Fft2Plan {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
            scale: 1.0 / ((rows * cols) as f64).sqrt(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// In-place centered transform of one row-major `rows × cols` buffer.
    pub fn transform(&self, buf: &mut [Complex64], direction: Direction) {
        let (rows, cols) = (self.rows, self.cols);
        debug_assert_eq!(buf.len(), rows * cols);
        let (row_fft, col_fft) = match direction {
            Direction::Forward => (&self.row_fwd, &self.col_fwd),
            Direction::Inverse => (&self.row_inv, &self.col_inv),
        };

        // ifftshift into a transposed scratch: t[c][r] = buf[(r + rows/2) % rows][(c + cols/2) % cols]
        let mut t = vec![Complex64::new(0.0, 0.0); rows * cols];
        for r in 0..rows {
            let sr = (r + rows / 2) % rows;
            for c in 0..cols {
                let sc = (c + cols / 2) % cols;
                t[c * rows + r] = buf[sr * cols + sc];
            }
        }
        col_fft.process(&mut t);

        // transpose back, then rows
        for c in 0..cols {
            for r in 0..rows {
                buf[r * cols + c] = t[c * rows + r];
            }
        }
        row_fft.process(buf);

        // fftshift and scale: out[r][c] = in[(r + rows - rows/2) % rows][(c + cols - cols/2) % cols]
        t.copy_from_slice(buf);
        let (hr, hc) = (rows - rows / 2, cols - cols / 2);
        for r in 0..rows {
            let sr = (r + hr) % rows;
            for c in 0..cols {
                let sc = (c + hc) % cols;
                buf[r * cols + c] = t[sr * cols + sc] * self.scale;
            }
        }
    }
}

pub(crate) fn widen(src: &[Complex32]) -> Vec<Complex64> {
    src.iter().map(|z| Complex64::new(z.re as f64, z.im as f64)).collect()
}

pub(crate) fn narrow(src: &[Complex64]) -> Vec<Complex32> {
    src.iter().map(|z| Complex32::new(z.re as f32, z.im as f32)).collect()
}

pub fn fft2c(img: &ComplexImage, direction: Direction) -> ComplexImage {
    let plan = Fft2Plan::new(img.rows(), img.cols());
    let mut buf = widen(img.pixels());
    plan.transform(&mut buf, direction);
    ComplexImage::new(img.slice_index, img.rows(), img.cols(), narrow(&buf))
        .expect("transform preserves shape")
}
