//! Real-valued multicarrier transforms and shared FFT plumbing.
//!
//! Scaling convention: the inverse transform carries the 1/N factor, the
//! forward transform is unscaled. Any consistent convention would satisfy
//! the round-trip property; this one is fixed so golden files stay stable.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan_forward(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

fn plan_inverse(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Unscaled forward DFT, any length.
pub fn fft(buf: &mut [Complex64]) {
    plan_forward(buf.len()).process(buf);
}

/// Inverse DFT including the 1/N factor, any length.
pub fn ifft(buf: &mut [Complex64]) {
    let n = buf.len();
    plan_inverse(n).process(buf);
    let scale = 1.0 / n as f64;
    for x in buf.iter_mut() {
        *x *= scale;
    }
}

/// DFT bin center frequencies in Hz for an `n`-point transform at `fs`,
/// in rustfft bin order (0, fs/n, ..., -fs/n).
pub fn bin_frequencies(n: usize, fs: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            if k <= n / 2 {
                k as f64 * fs / n as f64
            } else {
                (k as f64 - n as f64) * fs / n as f64
            }
        })
        .collect()
}

fn check_fft_len(n: usize) -> Result<()> {
    if n < 4 || !n.is_power_of_two() {
        return Err(Error::invalid(format!(
            "fft_len must be a power of two >= 4, got {n}"
        )));
    }
    Ok(())
}

/// Inverse transform of a Hermitian-extended spectrum to a real block.
///
/// `bins` holds subcarriers 1..N/2-1; DC and Nyquist are implicitly zero.
/// The output is the length-N inverse DFT of the spectrum extended with
/// `S[N-k] = conj(S[k])`, which is real by construction.
pub fn hermitian_ifft(bins: &[Complex64], fft_len: usize) -> Result<Vec<f64>> {
    check_fft_len(fft_len)?;
    let n_bins = fft_len / 2 - 1;
    if bins.len() != n_bins {
        return Err(Error::invalid(format!(
            "expected {n_bins} bins for fft_len {fft_len}, got {}",
            bins.len()
        )));
    }

    let mut spectrum = vec![Complex64::new(0.0, 0.0); fft_len];
    for (k, &b) in bins.iter().enumerate() {
        spectrum[k + 1] = b;
        spectrum[fft_len - 1 - k] = b.conj();
    }
    ifft(&mut spectrum);
    Ok(spectrum.into_iter().map(|x| x.re).collect())
}

/// Forward transform of a real block back to subcarriers 1..N/2-1.
///
/// Exact inverse of [`hermitian_ifft`] up to numerical tolerance.
pub fn forward_fft_real(block: &[f64]) -> Result<Vec<Complex64>> {
    let n = block.len();
    check_fft_len(n)?;
    let mut buf: Vec<Complex64> = block.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft(&mut buf);
    Ok(buf[1..n / 2].to_vec())
}
