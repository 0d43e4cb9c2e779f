//! Normalized discrete Fourier transform of arbitrary length.
//!
//! `ĝ_h = (1/M) Σ_j g_j e^{-2πi jh/M}`. Lattice sizes are primes, so the
//! kernel must not assume smooth lengths; rustfft picks Rader or Bluestein
//! plans for those.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// A reusable forward transform of one fixed length.
pub struct Dft {
    fft: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Dft {
    pub fn new(len: usize) -> Self {
        let fft = planned(len);
        let scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        Self { fft, scratch }
    }

    pub fn len(&self) -> usize {
        self.fft.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fft.len() == 0
    }

    /// Transforms `buf` in place, including the `1/M` factor.
    pub fn forward_normalized(&mut self, buf: &mut [Complex64]) -> Result<()> {
        if buf.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                found: buf.len(),
            });
        }
        check_finite(buf)?;
        if buf.is_empty() {
            return Ok(());
        }
        self.fft.process_with_scratch(buf, &mut self.scratch);
        let scale = 1.0 / buf.len() as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
        Ok(())
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn planned(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub(crate) fn check_finite(values: &[Complex64]) -> Result<()> {
    match values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// Normalized forward DFT of `samples`.
pub fn dft_forward_normalized(samples: &[Complex64]) -> Result<Vec<Complex64>> {
    if samples.is_empty() {
        return Err(Error::invalid("transform length must be positive"));
    }
    let mut buf = samples.to_vec();
    Dft::new(samples.len()).forward_normalized(&mut buf)?;
    Ok(buf)
}
