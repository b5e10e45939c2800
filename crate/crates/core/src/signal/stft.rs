use std::f64::consts::PI;

use realfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::spectrum::{irfft, rfft};
use super::{BinSet, TimeSignal};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Periodic Hann, `0.5 * (1 - cos(2*pi*i/w))`.
    Hann,
}

impl Window {
    pub fn coefficients(self, size: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..size)
                .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / size as f64).cos()))
                .collect(),
        }
    }
}

/// Short-time spectra of a signal, stored frame-major (`frames[t][k]`).
///
/// The signal is zero-padded by `frame_size / 2` on both sides before framing,
/// so frame `t` is centred on sample `t * hop`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: Vec<Vec<Complex64>>,
    frame_size: usize,
    hop: usize,
    window: Window,
    sample_rate: u32,
    original_length: usize,
}

impl Spectrogram {
    pub fn frames(&self) -> &[Vec<Complex64>] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [Vec<Complex64>] {
        &mut self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Frequency bins per frame, `frame_size / 2 + 1`.
    pub fn bin_count(&self) -> usize {
        self.frame_size / 2 + 1
    }

    pub fn frame_size(&self) -> usize {
        self.frame_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn original_length(&self) -> usize {
        self.original_length
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.frame_size as f64
    }

    /// Multiplies `bins` of the given frames by `factor`.
    pub fn scale_cells(&mut self, frames: &[usize], bins: &BinSet, factor: Complex64) -> Result<()> {
        bins.check_range(self.bin_count())?;
        for &t in frames {
            let frame = self
                .frames
                .get_mut(t)
                .ok_or_else(|| Error::InvalidStft(format!("frame {t} out of range")))?;
            for k in bins.iter() {
                frame[k] = if factor.im == 0.0 {
                    frame[k] * factor.re
                } else {
                    frame[k] * factor
                };
            }
        }
        Ok(())
    }
}

/// Hann-windowed STFT. `frame_size` must be a power of two no longer than
/// the signal, and `hop` must divide it and be at most half of it.
pub fn stft(signal: &TimeSignal, frame_size: usize, hop: usize) -> Result<Spectrogram> {
    if !frame_size.is_power_of_two() || frame_size < 2 {
        return Err(Error::InvalidStft(format!(
            "frame size {frame_size} is not a power of two"
        )));
    }
    if frame_size > signal.len() {
        return Err(Error::InvalidStft(format!(
            "frame size {frame_size} exceeds signal length {}",
            signal.len()
        )));
    }
    if hop == 0 || hop > frame_size / 2 || !frame_size.is_multiple_of(hop) {
        return Err(Error::InvalidStft(format!(
            "hop {hop} must divide frame size {frame_size} and be at most half of it"
        )));
    }

    let pad = frame_size / 2;
    let n = signal.len();
    let frame_count = 1 + (n + 2 * pad - frame_size).div_ceil(hop);
    let padded_len = frame_size + (frame_count - 1) * hop;
    let mut padded = vec![0.0f64; padded_len];
    for (dst, &s) in padded[pad..pad + n].iter_mut().zip(signal.samples()) {
        *dst = s as f64;
    }

    let window = Window::Hann;
    let coeffs = window.coefficients(frame_size);
    let mut buf = vec![0.0f64; frame_size];
    let frames = (0..frame_count)
        .map(|t| {
            let start = t * hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = padded[start + i] * coeffs[i];
            }
            rfft(&buf)
        })
        .collect();

    Ok(Spectrogram {
        frames,
        frame_size,
        hop,
        window,
        sample_rate: signal.sample_rate(),
        original_length: n,
    })
}

/// Least-squares overlap-add inverse: each inverse frame is windowed again and
/// the sum is divided by the summed squared window.
pub fn istft(spectrogram: &Spectrogram) -> TimeSignal {
    let w = spectrogram.frame_size;
    let hop = spectrogram.hop;
    let pad = w / 2;
    let coeffs = spectrogram.window.coefficients(w);
    let padded_len = w + (spectrogram.frames.len() - 1) * hop;
    let mut acc = vec![0.0f64; padded_len];
    let mut norm = vec![0.0f64; padded_len];
    for (t, frame) in spectrogram.frames.iter().enumerate() {
        let start = t * hop;
        let time = irfft(frame, w);
        for i in 0..w {
            acc[start + i] += time[i] * coeffs[i];
            norm[start + i] += coeffs[i] * coeffs[i];
        }
    }
    let samples: Vec<f64> = (pad..pad + spectrogram.original_length)
        .map(|i| if norm[i] > 1e-10 { acc[i] / norm[i] } else { 0.0 })
        .collect();
    TimeSignal::from_f64(&samples, spectrogram.sample_rate).expect("overlap-add of finite frames is finite")
}

/// STFT bin whose centre is nearest to full-spectrum bin `k` of an
/// `n`-sample signal, for frames of `frame_size` samples. Ties go to the lower bin.
pub fn nearest_stft_bin(k: usize, n: usize, frame_size: usize) -> usize {
    let num = k * frame_size;
    let (q, r) = (num / n, num % n);
    let j = if 2 * r > n { q + 1 } else { q };
    j.min(frame_size / 2)
}

/// Maps full-spectrum bins of the spectrogram's source signal onto STFT bins.
/// Many full-resolution bins collapse onto one STFT bin.
pub fn map_bins(spectrum_bins: &BinSet, spectrogram: &Spectrogram) -> BinSet {
    spectrum_bins
        .iter()
        .map(|k| nearest_stft_bin(k, spectrogram.original_length, spectrogram.frame_size))
        .collect()
}
