//! Fixed-weight reference classifier over hand-coded spectral features.
//!
//! Features are 16 log relative band energies on geometric bands, the
//! spectral centroid and the spectral rolloff (both as a fraction of Nyquist).
//! Because band energies are taken relative to the total energy the features,
//! and therefore the label, are invariant to overall gain.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Classification, ClassifierHandle, Model, ModelKind};
use crate::error::{Error, Result};
use crate::signal::{forward, TimeSignal};

pub const BAND_COUNT: usize = 16;
const FEATURE_COUNT: usize = BAND_COUNT + 2;
const WEIGHTS_FORMAT: &str = "audiocause-builtin-weights";
const SUPPORTED_VERSION: u32 = 1;

/// Mean square below which a signal is treated as silent.
const SILENCE_MEAN_SQUARE: f64 = 1e-24;

static DEFAULT_WEIGHTS: &str = include_str!("../../data/builtin_weights_v1.json");

/// Versioned weights file for [`BuiltinClassifier`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub format: String,
    pub version: u32,
    /// `BAND_COUNT + 1` increasing edges in Hz.
    pub band_edges_hz: Vec<f64>,
    /// Added to each relative band energy before the log.
    pub floor: f64,
    pub rolloff_fraction: f64,
    /// Softmax inverse temperature.
    pub gain: f64,
    pub labels: Vec<String>,
    /// Bands each label is built around; used by the corpus generator.
    pub owned_bands: BTreeMap<String, Vec<usize>>,
    /// One row of `BAND_COUNT + 2` weights per label.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Weights {
    pub fn shipped() -> Weights {
        Self::from_json(DEFAULT_WEIGHTS).expect("shipped weights are valid")
    }

    pub fn from_json(text: &str) -> Result<Weights> {
        let weights: Weights = serde_json::from_str(text).map_err(|e| Error::Weights(e.to_string()))?;
        weights.validate()?;
        Ok(weights)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Weights> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Weights(msg));
        if self.format != WEIGHTS_FORMAT {
            return fail(format!("unknown format '{}'", self.format));
        }
        if self.version != SUPPORTED_VERSION {
            return fail(format!("unsupported version {}", self.version));
        }
        if self.band_edges_hz.len() != BAND_COUNT + 1
            || self
                .band_edges_hz
                .windows(2)
                .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
            || self.band_edges_hz[0] < 0.0
        {
            return fail("band edges must be 17 increasing non-negative values".into());
        }
        if self.labels.len() < 2 {
            return fail("need at least two labels".into());
        }
        if self.weights.len() != self.labels.len() || self.bias.len() != self.labels.len() {
            return fail("one weight row and bias per label required".into());
        }
        if self.weights.iter().any(|row| row.len() != FEATURE_COUNT) {
            return fail(format!("weight rows must have {FEATURE_COUNT} entries"));
        }
        let all_finite = self
            .weights
            .iter()
            .flatten()
            .chain(&self.bias)
            .chain([&self.floor, &self.gain, &self.rolloff_fraction])
            .all(|v| v.is_finite());
        if !all_finite || self.floor <= 0.0 || !(0.0..1.0).contains(&self.rolloff_fraction) {
            return fail("non-finite or out-of-range parameter".into());
        }
        for (label, bands) in &self.owned_bands {
            if !self.labels.contains(label) || bands.iter().any(|&b| b >= BAND_COUNT) {
                return fail(format!("bad band ownership for '{label}'"));
            }
        }
        Ok(())
    }

    /// `[lo, hi)` frequency range of band `b` in Hz.
    pub fn band_range(&self, b: usize) -> (f64, f64) {
        (self.band_edges_hz[b], self.band_edges_hz[b + 1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    /// `ln(E_band / E_total + floor)` per band.
    pub log_band_energy: [f64; BAND_COUNT],
    /// Energy-weighted mean frequency over Nyquist.
    pub centroid: f64,
    /// Frequency below which `rolloff_fraction` of the energy lies, over Nyquist.
    pub rolloff: f64,
}

impl Features {
    fn as_vector(&self) -> [f64; FEATURE_COUNT] {
        let mut v = [0.0; FEATURE_COUNT];
        v[..BAND_COUNT].copy_from_slice(&self.log_band_energy);
        v[BAND_COUNT] = self.centroid;
        v[BAND_COUNT + 1] = self.rolloff;
        v
    }
}

#[derive(Debug, Clone)]
pub struct BuiltinClassifier {
    weights: Weights,
}

impl BuiltinClassifier {
    pub fn new(weights: Weights) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn features(&self, signal: &TimeSignal) -> Features {
        let w = &self.weights;
        let mean_square = signal.samples().iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / signal.len() as f64;
        if mean_square < SILENCE_MEAN_SQUARE {
            let uniform = (1.0 / BAND_COUNT as f64 + w.floor).ln();
            return Features {
                log_band_energy: [uniform; BAND_COUNT],
                centroid: 0.0,
                rolloff: 0.0,
            };
        }

        let spectrum = forward(signal);
        let nyquist = signal.sample_rate() as f64 / 2.0;
        let power: Vec<f64> = spectrum.bins().iter().map(|c| c.norm_sqr()).collect();
        let total: f64 = power.iter().sum();

        let mut band_energy = [0.0f64; BAND_COUNT];
        let mut weighted_freq = 0.0;
        for (k, &p) in power.iter().enumerate() {
            let f = spectrum.bin_frequency(k);
            weighted_freq += f * p;
            if let Some(b) = self.band_of(f) {
                band_energy[b] += p;
            }
        }

        let threshold = w.rolloff_fraction * total;
        let mut cumulative = 0.0;
        let mut rolloff_bin = power.len() - 1;
        for (k, &p) in power.iter().enumerate() {
            cumulative += p;
            if cumulative >= threshold {
                rolloff_bin = k;
                break;
            }
        }

        Features {
            log_band_energy: band_energy.map(|e| (e / total + w.floor).ln()),
            centroid: weighted_freq / total / nyquist,
            rolloff: spectrum.bin_frequency(rolloff_bin) / nyquist,
        }
    }

    fn band_of(&self, f: f64) -> Option<usize> {
        let edges = &self.weights.band_edges_hz;
        if f < edges[0] || f >= edges[BAND_COUNT] {
            return None;
        }
        Some(edges.partition_point(|&e| e <= f) - 1)
    }

    pub fn scores(&self, features: &Features) -> BTreeMap<String, f64> {
        let w = &self.weights;
        let x = features.as_vector();
        let logits: Vec<f64> = w
            .weights
            .iter()
            .zip(&w.bias)
            .map(|(row, b)| w.gain * (row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() + b))
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        w.labels.iter().cloned().zip(exp.iter().map(|e| e / sum)).collect()
    }
}

impl Model for BuiltinClassifier {
    fn kind(&self) -> ModelKind {
        ModelKind::Builtin
    }

    fn predict(&mut self, signal: &TimeSignal) -> Result<Classification> {
        let features = self.features(signal);
        Classification::from_scores(self.scores(&features))
    }

    fn try_clone(&self) -> Option<Box<dyn Model>> {
        Some(Box::new(self.clone()))
    }
}

/// Handle over the builtin classifier with the shipped weights.
pub fn builtin_reference_classifier() -> ClassifierHandle {
    ClassifierHandle::new(BuiltinClassifier::new(Weights::shipped()))
}
