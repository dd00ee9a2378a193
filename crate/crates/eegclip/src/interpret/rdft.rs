//! Real-input discrete Fourier transform and its gradient pullback.
//!
//! A real row of `n` samples is represented by the bins `k = 0..=n/2` of
//! its DFT, `X_k = sum_t x[t] exp(-2 pi i k t / n)`. The reconstruction
//! differentiated through here is the exact inverse
//!
//! ```text
//! x[t] = (1/n) * ( X_0
//!                + 2 * sum_{0<k<n/2} (Re X_k cos a - Im X_k sin a)
//!                + Re X_{n/2} cos(pi t)        only for even n
//!                )                             with a = 2 pi k t / n
//! ```
//!
//! Because that map is linear, a gradient `g` at the samples pulls back
//! onto the coefficients as a weighted forward transform of `g`: `2/n`
//! times `FFT(g)_k` at interior bins and `1/n` at the DC and Nyquist
//! bins, whose imaginary parts are not degrees of freedom and get
//! derivative zero.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Number of real-DFT bins for a row of `n` samples: `n/2 + 1`.
pub fn n_bins(n: usize) -> usize {
    n / 2 + 1
}

/// Forward transform of one fixed row length, planned once.
pub struct Rdft {
    fft: Arc<dyn Fft<f64>>,
    n: usize,
}

impl Rdft {
    /// Plans for rows of `n` samples. Panics if `n < 2`.
    pub fn new(n: usize) -> Rdft {
        assert!(n >= 2, "a spectrum needs at least 2 samples");
        Rdft {
            fft: FftPlanner::new().plan_fft_forward(n),
            n,
        }
    }

    pub fn window_len(&self) -> usize {
        self.n
    }

    pub fn n_bins(&self) -> usize {
        n_bins(self.n)
    }

    /// `(Re X_k, Im X_k)` for bins `0..=n/2`.
    pub fn forward(&self, x: &[f64]) -> Vec<(f64, f64)> {
        assert_eq!(x.len(), self.n, "row length does not match the plan");
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.process(&mut buf);
        buf[..self.n_bins()].iter().map(|c| (c.re, c.im)).collect()
    }

    /// Pullback of a sample-space gradient onto the coefficients:
    /// `(df/dRe X_k, df/dIm X_k)` for `g[t] = df/dx[t]`.
    pub fn pullback(&self, g: &[f64]) -> Vec<(f64, f64)> {
        let spec = self.forward(g);
        let nf = self.n as f64;
        let last = spec.len() - 1;
        spec.iter()
            .enumerate()
            .map(|(k, &(re, im))| {
                if k == 0 || (self.n.is_multiple_of(2) && k == last) {
                    (re / nf, 0.0)
                } else {
                    (2.0 * re / nf, 2.0 * im / nf)
                }
            })
            .collect()
    }
}

/// Exact inverse of [`Rdft::forward`] for a real signal of `n` samples.
/// Only the evaluation of reconstructions ever calls this, so the direct
/// O(n^2) sum is fine; angles are reduced modulo the period first to keep
/// them small. Panics if `coeffs` does not hold `n/2 + 1` bins.
pub fn irdft(coeffs: &[(f64, f64)], n: usize) -> Vec<f64> {
    assert_eq!(coeffs.len(), n_bins(n), "bin count does not match n");
    let nf = n as f64;
    let last = coeffs.len() - 1;
    (0..n)
        .map(|t| {
            let mut acc = coeffs[0].0;
            for (k, &(re, im)) in coeffs.iter().enumerate().skip(1) {
                let ang = std::f64::consts::TAU * ((k * t) % n) as f64 / nf;
                let w = if n.is_multiple_of(2) && k == last { 1.0 } else { 2.0 };
                acc += w * (re * ang.cos() - im * ang.sin());
            }
            acc / nf
        })
        .collect()
}
