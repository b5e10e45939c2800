//! Audio I/O and invertible frequency-domain representations.
//!
//! Conventions used everywhere else in the crate:
//!
//! * a "frequency" is an index into the one-sided spectrum of a real signal,
//!   bin `k` sitting at `k * sample_rate / n` Hz;
//! * the forward transform is unnormalized and the inverse is scaled by `1/n`;
//! * removing a bin means setting it to exactly zero.

mod spectrum;
mod stft;
mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use spectrum::{forward, inverse, mask, Spectrum};
pub use stft::{istft, map_bins, stft, Spectrogram, Window};
pub use wav::{load_wav, save_wav, wav_roundtrip, WavEncoding};

/// A mono, finite, non-empty sequence of samples.
///
/// Samples are held as `f32` so that whatever is classified is exactly what a
/// float32 wav export or the bridge wire format carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSignal {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl TimeSignal {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidSignal("signal has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidSignal("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidSignal(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    /// Builds a signal from `f64` samples, rounding each to `f32`.
    pub fn from_f64(samples: &[f64], sample_rate: u32) -> Result<Self> {
        Self::new(samples.iter().map(|&s| s as f32).collect(), sample_rate)
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    /// Scales so the largest absolute sample is `target`. Silence is returned unchanged.
    pub fn peak_normalized(&self, target: f32) -> TimeSignal {
        let peak = self.peak();
        if peak == 0.0 {
            return self.clone();
        }
        let gain = target / peak;
        TimeSignal {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Zero-pads (or truncates) to exactly `len` samples.
    pub fn resized(&self, len: usize) -> Result<TimeSignal> {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        TimeSignal::new(samples, self.sample_rate)
    }

    /// Max absolute and L2 sample-wise difference to `other` over the common prefix.
    pub fn distance(&self, other: &TimeSignal) -> (f64, f64) {
        let mut linf = 0.0f64;
        let mut l2 = 0.0f64;
        for (a, b) in self.samples.iter().zip(&other.samples) {
            let d = (*a as f64 - *b as f64).abs();
            linf = linf.max(d);
            l2 += d * d;
        }
        (linf, l2.sqrt())
    }
}

/// A strictly increasing set of spectrum bin indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BinSet {
    indices: Vec<usize>,
}

impl BinSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// All bins `0..len`.
    pub fn full(len: usize) -> Self {
        Self {
            indices: (0..len).collect(),
        }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn max(&self) -> Option<usize> {
        self.indices.last().copied()
    }

    /// Checks that every index addresses a spectrum with `len` bins.
    pub fn check_range(&self, len: usize) -> Result<()> {
        match self.max() {
            Some(index) if index >= len => Err(Error::BinOutOfRange { index, len }),
            _ => Ok(()),
        }
    }

    pub fn union(&self, other: &BinSet) -> BinSet {
        self.iter().chain(other.iter()).collect()
    }

    pub fn intersection(&self, other: &BinSet) -> BinSet {
        self.iter().filter(|&i| other.contains(i)).collect()
    }

    /// Bins of `0..len` not in this set.
    pub fn complement(&self, len: usize) -> BinSet {
        (0..len).filter(|&i| !self.contains(i)).collect()
    }

    pub fn is_subset(&self, other: &BinSet) -> bool {
        self.iter().all(|i| other.contains(i))
    }
}

impl FromIterator<usize> for BinSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut indices: Vec<usize> = iter.into_iter().collect();
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }
}

impl From<Vec<usize>> for BinSet {
    fn from(indices: Vec<usize>) -> Self {
        indices.into_iter().collect()
    }
}
