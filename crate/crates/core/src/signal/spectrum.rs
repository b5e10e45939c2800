use std::cell::RefCell;
use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::{BinSet, TimeSignal};
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
}

pub(crate) fn forward_plan(len: usize) -> Arc<dyn RealToComplex<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub(crate) fn inverse_plan(len: usize) -> Arc<dyn ComplexToReal<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Unnormalized one-sided DFT of `input` (length `n`), `n/2 + 1` bins.
pub(crate) fn rfft(input: &[f64]) -> Vec<Complex64> {
    let plan = forward_plan(input.len());
    let mut buf = input.to_vec();
    let mut out = plan.make_output_vec();
    plan.process(&mut buf, &mut out)
        .expect("buffer sizes come from the plan");
    out
}

/// Inverse of [`rfft`] including the `1/n` scale. The imaginary parts of the
/// DC and Nyquist bins are ignored, so the output is real by construction.
pub(crate) fn irfft(bins: &[Complex64], len: usize) -> Vec<f64> {
    let plan = inverse_plan(len);
    let mut buf = bins.to_vec();
    buf[0].im = 0.0;
    if len.is_multiple_of(2) {
        buf[len / 2].im = 0.0;
    }
    let mut out = plan.make_output_vec();
    plan.process(&mut buf, &mut out)
        .expect("buffer sizes come from the plan");
    let scale = 1.0 / len as f64;
    out.iter_mut().for_each(|x| *x *= scale);
    out
}

/// One-sided Fourier coefficients of a real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: Vec<Complex64>,
    original_length: usize,
    sample_rate: u32,
}

impl Spectrum {
    /// Wraps raw coefficients. `bins.len()` must equal `original_length / 2 + 1`.
    pub fn from_bins(bins: Vec<Complex64>, original_length: usize, sample_rate: u32) -> Result<Self> {
        if original_length == 0 || sample_rate == 0 {
            return Err(Error::InvalidSignal("empty spectrum".into()));
        }
        if bins.len() != original_length / 2 + 1 {
            return Err(Error::Incompatible(format!(
                "{} bins cannot describe a {original_length}-sample signal",
                bins.len()
            )));
        }
        Ok(Self {
            bins,
            original_length,
            sample_rate,
        })
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn original_length(&self) -> usize {
        self.original_length
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.original_length as f64
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }

    /// Energy of the time-domain signal this spectrum describes (Parseval).
    pub fn energy(&self) -> f64 {
        let n = self.original_length;
        let mut total = 0.0;
        for (k, c) in self.bins.iter().enumerate() {
            let weight = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
                1.0
            } else {
                2.0
            };
            total += weight * c.norm_sqr();
        }
        total / n as f64
    }

    /// Multiplies each listed bin by a real scalar, leaving the others bit-identical.
    pub fn scaled(&self, bins: &BinSet, factor: f64) -> Result<Spectrum> {
        self.multiplied(bins, Complex64::new(factor, 0.0))
    }

    /// Multiplies each listed bin by a complex factor, leaving the others bit-identical.
    pub fn multiplied(&self, bins: &BinSet, factor: Complex64) -> Result<Spectrum> {
        bins.check_range(self.len())?;
        let mut out = self.clone();
        for k in bins.iter() {
            out.bins[k] = if factor.im == 0.0 {
                out.bins[k] * factor.re
            } else {
                out.bins[k] * factor
            };
        }
        Ok(out)
    }

    /// Bin-wise sum; both spectra must describe signals of the same length and rate.
    pub fn add(&self, other: &Spectrum) -> Result<Spectrum> {
        self.check_compatible(other)?;
        let bins = self.bins.iter().zip(&other.bins).map(|(a, b)| a + b).collect();
        Ok(Spectrum {
            bins,
            original_length: self.original_length,
            sample_rate: self.sample_rate,
        })
    }

    pub fn check_compatible(&self, other: &Spectrum) -> Result<()> {
        if self.original_length != other.original_length || self.sample_rate != other.sample_rate {
            return Err(Error::Incompatible(format!(
                "{} samples @ {} Hz vs {} samples @ {} Hz",
                self.original_length, self.sample_rate, other.original_length, other.sample_rate
            )));
        }
        Ok(())
    }
}

pub fn forward(signal: &TimeSignal) -> Spectrum {
    let input: Vec<f64> = signal.samples().iter().map(|&s| s as f64).collect();
    Spectrum {
        bins: rfft(&input),
        original_length: signal.len(),
        sample_rate: signal.sample_rate(),
    }
}

pub fn inverse(spectrum: &Spectrum) -> TimeSignal {
    let samples = irfft(&spectrum.bins, spectrum.original_length);
    TimeSignal::from_f64(&samples, spectrum.sample_rate)
        .expect("inverse of a finite spectrum is a finite, non-empty signal")
}

/// Keeps the bins in `keep` untouched and sets every other bin to zero.
pub fn mask(spectrum: &Spectrum, keep: &BinSet) -> Result<Spectrum> {
    keep.check_range(spectrum.len())?;
    let mut bins = vec![Complex64::new(0.0, 0.0); spectrum.len()];
    for k in keep.iter() {
        bins[k] = spectrum.bins[k];
    }
    Ok(Spectrum {
        bins,
        original_length: spectrum.original_length,
        sample_rate: spectrum.sample_rate,
    })
}
