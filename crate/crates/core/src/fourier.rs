//! Fourier coefficients of smooth periodic functions on oversampled grids, and
//! a small 2D FFT helper.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};

/// Coefficients with modulus below this are dropped.
pub const COEFF_TOL: f64 = 1e-14;
/// Grid size over the needed bandwidth.
pub const OVERSAMPLE: usize = 4;
const MAX_GRID_1D: usize = 1 << 16;
const MAX_GRID_2D: usize = 1 << 11;

fn centered(m: usize, s: usize) -> i64 {
    if m < s / 2 {
        m as i64
    } else {
        m as i64 - s as i64
    }
}

/// Centered coefficients `u_{-B..=B}` of a 1-periodic-in-2pi function.
///
/// The grid is doubled until it holds `OVERSAMPLE * (2B + 1)` points, where `B`
/// is the largest index with `|u_m| > COEFF_TOL`.
pub fn coefficients_1d(f: impl Fn(f64) -> Complex64) -> Result<(i64, Vec<Complex64>)> {
    let mut planner = FftPlanner::new();
    let mut s = 64usize;
    loop {
        let fft = planner.plan_fft_forward(s);
        let mut buf: Vec<Complex64> = (0..s).map(|j| f(2.0 * std::f64::consts::PI * j as f64 / s as f64)).collect();
        fft.process(&mut buf);
        let scale = 1.0 / s as f64;
        let mut b = 0i64;
        for (m, c) in buf.iter().enumerate() {
            if (c * scale).norm() > COEFF_TOL {
                b = b.max(centered(m, s).abs());
            }
        }
        if s >= OVERSAMPLE * (2 * b as usize + 1) {
            let coeffs = (-b..=b)
                .map(|m| {
                    let c = buf[m.rem_euclid(s as i64) as usize] * scale;
                    if c.norm() > COEFF_TOL {
                        c
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect();
            return Ok((b, coeffs));
        }
        s *= 2;
        if s > MAX_GRID_1D {
            return invalid("kick Fourier series does not converge on the maximum grid");
        }
    }
}

/// Coefficients of a function on the 2-torus; returns per-axis bandwidths and
/// the `(2B1+1) x (2B2+1)` row-major coefficient block.
pub fn coefficients_2d(f: impl Fn(f64, f64) -> Complex64) -> Result<([i64; 2], Vec<Complex64>)> {
    let mut s = 32usize;
    loop {
        let fft = Fft2d::new(s, s);
        let h = 2.0 * std::f64::consts::PI / s as f64;
        let mut buf: Vec<Complex64> = (0..s * s).map(|i| f((i / s) as f64 * h, (i % s) as f64 * h)).collect();
        fft.forward(&mut buf);
        let scale = 1.0 / (s * s) as f64;
        let mut b = [0i64; 2];
        for (i, c) in buf.iter().enumerate() {
            if (c * scale).norm() > COEFF_TOL {
                b[0] = b[0].max(centered(i / s, s).abs());
                b[1] = b[1].max(centered(i % s, s).abs());
            }
        }
        let need = OVERSAMPLE * (2 * b[0].max(b[1]) as usize + 1);
        if s >= need {
            let w2 = 2 * b[1] + 1;
            let mut block = vec![Complex64::new(0.0, 0.0); ((2 * b[0] + 1) * w2) as usize];
            for m1 in -b[0]..=b[0] {
                for m2 in -b[1]..=b[1] {
                    let i = m1.rem_euclid(s as i64) as usize * s + m2.rem_euclid(s as i64) as usize;
                    let c = buf[i] * scale;
                    if c.norm() > COEFF_TOL {
                        block[((m1 + b[0]) * w2 + m2 + b[1]) as usize] = c;
                    }
                }
            }
            return Ok((b, block));
        }
        s *= 2;
        if s > MAX_GRID_2D {
            return invalid("kick Fourier series does not converge on the maximum 2D grid");
        }
    }
}

/// Unnormalized 2D FFT over a row-major `l1 x l2` buffer.
pub struct Fft2d {
    l1: usize,
    l2: usize,
    fwd1: Arc<dyn Fft<f64>>,
    inv1: Arc<dyn Fft<f64>>,
    fwd2: Arc<dyn Fft<f64>>,
    inv2: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2d").field("l1", &self.l1).field("l2", &self.l2).finish()
    }
}

impl Clone for Fft2d {
    fn clone(&self) -> Self {
        Self {
            l1: self.l1,
            l2: self.l2,
            fwd1: Arc::clone(&self.fwd1),
            inv1: Arc::clone(&self.inv1),
            fwd2: Arc::clone(&self.fwd2),
            inv2: Arc::clone(&self.inv2),
            scratch_len: self.scratch_len,
        }
    }
}

impl Fft2d {
    pub fn new(l1: usize, l2: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd1 = planner.plan_fft_forward(l1);
        let inv1 = planner.plan_fft_inverse(l1);
        let fwd2 = planner.plan_fft_forward(l2);
        let inv2 = planner.plan_fft_inverse(l2);
        let scratch_len = [&fwd1, &inv1, &fwd2, &inv2].iter().map(|p| p.get_inplace_scratch_len()).max().unwrap_or(0);
        Self { l1, l2, fwd1, inv1, fwd2, inv2, scratch_len }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.l1, self.l2)
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, self.fwd1.as_ref(), self.fwd2.as_ref());
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, self.inv1.as_ref(), self.inv2.as_ref());
    }

    fn run(&self, buf: &mut [Complex64], axis1: &dyn Fft<f64>, axis2: &dyn Fft<f64>) {
        debug_assert_eq!(buf.len(), self.l1 * self.l2);
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.scratch_len];
        let mut column = vec![Complex64::new(0.0, 0.0); self.l1];
        for row in buf.chunks_exact_mut(self.l2) {
            axis2.process_with_scratch(row, &mut scratch);
        }
        for c in 0..self.l2 {
            for r in 0..self.l1 {
                column[r] = buf[r * self.l2 + c];
            }
            axis1.process_with_scratch(&mut column, &mut scratch);
            for r in 0..self.l1 {
                buf[r * self.l2 + c] = column[r];
            }
        }
    }
}
