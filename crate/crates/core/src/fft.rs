//! Separable 2-D FFT over `ndarray` grids, built on `rustfft` 1-D plans.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse plans for one `rows x cols` shape.
pub struct Fft2d {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2d {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.run(data, &*self.row_fwd, &*self.col_fwd);
    }

    /// Unnormalized inverse; divide by `rows * cols` for a true inverse.
    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.run(data, &*self.row_inv, &*self.col_inv);
    }

    pub fn forward_real(&self, data: &Array2<f64>) -> Array2<Complex64> {
        let mut out = data.mapv(|v| Complex64::new(v, 0.0));
        self.forward(&mut out);
        out
    }

    fn run(&self, data: &mut Array2<Complex64>, row_plan: &dyn Fft<f64>, col_plan: &dyn Fft<f64>) {
        assert_eq!(data.dim(), (self.rows, self.cols), "fft shape mismatch");
        let buf = data.as_slice_mut().expect("fft input must be contiguous row-major");
        row_plan.process(buf);

        let mut column = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = buf[r * self.cols + c];
            }
            col_plan.process(&mut column);
            for r in 0..self.rows {
                buf[r * self.cols + c] = column[r];
            }
        }
    }
}

/// Moves the zero-frequency bin to `(rows / 2, cols / 2)`.
pub fn fftshift<T: Clone>(data: &Array2<T>) -> Array2<T> {
    let (rows, cols) = data.dim();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        data[((r + rows - rows / 2) % rows, (c + cols - cols / 2) % cols)].clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_undoes_forward() {
        let grid = Array2::from_shape_fn((6, 10), |(r, c)| (r * 3 + c * 7) as f64 % 5.0);
        let plan = Fft2d::new(6, 10);
        let mut spec = plan.forward_real(&grid);
        plan.inverse(&mut spec);
        for (a, b) in spec.iter().zip(grid.iter()) {
            assert!((a.re / 60.0 - b).abs() < 1e-12);
            assert!(a.im.abs() < 1e-9);
        }
    }

    #[test]
    fn shift_centers_dc() {
        let grid = Array2::from_shape_fn((4, 6), |(r, c)| r * 10 + c);
        let shifted = fftshift(&grid);
        assert_eq!(shifted[(2, 3)], 0);
        assert_eq!(shifted[(0, 0)], 23);
    }
}
