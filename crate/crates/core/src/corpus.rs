//! Synthetic labeled corpus for the builtin classifier.
//!
//! Each class owns two adjacent bands of the builtin feature bank. A clip of
//! class `c` holds one to four bin-centred tones inside `c`'s bands, one much
//! weaker distractor tone inside some other class's bands, and a white noise
//! floor. Tone frequencies are whole hertz and clip durations whole seconds,
//! so every tone lands exactly on a Fourier bin.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{BuiltinClassifier, ClassifierHandle, Weights};
use crate::error::{Error, Result};
use crate::signal::{load_wav, save_wav, TimeSignal, WavEncoding};

pub const SAMPLE_RATE: u32 = 8000;
pub const CLIPS_PER_CLASS: usize = 25;
pub const MIN_ACCURACY: f64 = 0.95;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "builtin_weights_v1.json";

const PEAK: f32 = 0.8;
const NOISE_STD: f64 = 0.004;
/// Keep tones away from band edges so leakage-free bins stay well inside.
const EDGE_MARGIN: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub frequency_hz: u32,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusClip {
    pub file: String,
    pub label: String,
    pub duration_secs: u32,
    pub tones: Vec<Tone>,
    pub distractor: Tone,
    pub distractor_label: String,
    pub predicted: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub sample_rate: u32,
    /// `[lo, hi)` Hz range owned by each class.
    pub class_ranges_hz: BTreeMap<String, (f64, f64)>,
    pub clips: Vec<CorpusClip>,
    pub accuracy: f64,
}

impl CorpusManifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<CorpusManifest> {
        let text = fs::read_to_string(dir.as_ref().join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn paths(&self, dir: impl AsRef<Path>) -> Vec<PathBuf> {
        self.clips.iter().map(|c| dir.as_ref().join(&c.file)).collect()
    }
}

/// Contiguous frequency range covered by each class's owned bands.
pub fn class_ranges(weights: &Weights) -> Result<BTreeMap<String, (f64, f64)>> {
    let mut ranges = BTreeMap::new();
    for label in &weights.labels {
        let bands = weights
            .owned_bands
            .get(label)
            .filter(|b| !b.is_empty())
            .ok_or_else(|| Error::Weights(format!("'{label}' owns no bands")))?;
        let lo = bands.iter().copied().min().unwrap_or_default();
        let hi = bands.iter().copied().max().unwrap_or_default();
        if hi - lo + 1 != bands.len() {
            return Err(Error::Weights(format!("bands of '{label}' are not contiguous")));
        }
        ranges.insert(label.clone(), (weights.band_range(lo).0, weights.band_range(hi).1));
    }
    let spans: Vec<&(f64, f64)> = ranges.values().collect();
    for (i, a) in spans.iter().enumerate() {
        for b in &spans[i + 1..] {
            if a.0 < b.1 && b.0 < a.1 {
                return Err(Error::Weights("class bands overlap".into()));
            }
        }
    }
    Ok(ranges)
}

fn tone_in(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64), amplitude: f64) -> Tone {
    let width = hi - lo;
    let lo = (lo + EDGE_MARGIN * width).ceil() as u32;
    let hi = (hi - EDGE_MARGIN * width).floor() as u32;
    Tone {
        frequency_hz: rng.gen_range(lo..=hi),
        amplitude,
        phase: rng.gen_range(0.0..2.0 * PI),
    }
}

fn render(tones: &[&Tone], n: usize, rng: &mut ChaCha8Rng) -> Result<TimeSignal> {
    let sr = f64::from(SAMPLE_RATE);
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let tonal: f64 = tones
                .iter()
                .map(|tone| tone.amplitude * (2.0 * PI * f64::from(tone.frequency_hz) * t + tone.phase).sin())
                .sum();
            // Sum of uniforms: cheap, deterministic, near-Gaussian.
            let noise: f64 = (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * NOISE_STD * (3.0f64 / 4.0).sqrt();
            tonal + noise
        })
        .collect();
    Ok(TimeSignal::from_f64(&samples, SAMPLE_RATE)?.peak_normalized(PEAK))
}

/// Builds a clip in memory; `index` selects the clip's random stream.
pub fn synthesize(
    seed: u64,
    ranges: &BTreeMap<String, (f64, f64)>,
    label: &str,
    index: usize,
) -> Result<(TimeSignal, CorpusClip)> {
    let class = ranges
        .keys()
        .position(|l| l == label)
        .ok_or_else(|| Error::Config(format!("unknown class '{label}'")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((class * 1_000_000 + index) as u64);

    let duration_secs: u32 = rng.gen_range(2..=5);
    let count = rng.gen_range(1..=4);
    let mut tones: Vec<Tone> = Vec::with_capacity(count);
    while tones.len() < count {
        let amplitude = rng.gen_range(0.2..0.4);
        let tone = tone_in(&mut rng, ranges[label], amplitude);
        if tones.iter().all(|t| t.frequency_hz != tone.frequency_hz) {
            tones.push(tone);
        }
    }
    let others: Vec<&String> = ranges.keys().filter(|l| *l != label).collect();
    let distractor_label = others[rng.gen_range(0..others.len())].clone();
    let amplitude = rng.gen_range(0.02..0.05);
    let distractor = tone_in(&mut rng, ranges[&distractor_label], amplitude);

    let n = (SAMPLE_RATE * duration_secs) as usize;
    let mut all: Vec<&Tone> = tones.iter().collect();
    all.push(&distractor);
    let signal = render(&all, n, &mut rng)?;
    let clip = CorpusClip {
        file: format!("{label}_{index}.wav"),
        label: label.to_string(),
        duration_secs,
        tones,
        distractor,
        distractor_label,
        predicted: String::new(),
    };
    Ok((signal, clip))
}

/// Writes `CLIPS_PER_CLASS` float32 clips per builtin class into `out_dir`,
/// together with a weights copy and a manifest. Fails if the builtin
/// classifier gets less than [`MIN_ACCURACY`] of the clips right.
pub fn gen_corpus(seed: u64, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let weights = Weights::shipped();
    let ranges = class_ranges(&weights)?;
    let mut handle = ClassifierHandle::new(BuiltinClassifier::new(weights.clone()));

    let mut clips = Vec::new();
    let mut correct = 0usize;
    for label in &weights.labels {
        for index in 0..CLIPS_PER_CLASS {
            let (signal, mut clip) = synthesize(seed, &ranges, label, index)?;
            let path = out_dir.join(&clip.file);
            save_wav(&signal, &path, WavEncoding::Float32)?;
            clip.predicted = handle.classify(&load_wav(&path)?)?.label;
            correct += usize::from(clip.predicted == clip.label);
            clips.push(clip);
        }
    }
    let accuracy = correct as f64 / clips.len() as f64;
    let manifest = CorpusManifest {
        seed,
        sample_rate: SAMPLE_RATE,
        class_ranges_hz: ranges,
        clips,
        accuracy,
    };
    fs::write(out_dir.join(WEIGHTS_FILE), weights.to_json())?;
    fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    log::info!(
        "corpus of {} clips, builtin accuracy {accuracy:.3}",
        manifest.clips.len()
    );
    if accuracy < MIN_ACCURACY {
        return Err(Error::Config(format!(
            "builtin accuracy {accuracy:.3} on the generated corpus is below {MIN_ACCURACY}"
        )));
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::forward;

    #[test]
    fn class_ranges_are_disjoint() {
        let ranges = class_ranges(&Weights::shipped()).unwrap();
        assert_eq!(ranges.len(), 4);
        let mut spans: Vec<(f64, f64)> = ranges.values().copied().collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in spans.windows(2) {
            assert!(w[0].1 <= w[1].0);
        }
    }

    #[test]
    fn tones_are_bin_centred_inside_the_owned_range() {
        let ranges = class_ranges(&Weights::shipped()).unwrap();
        for label in ranges.keys() {
            for index in 0..5 {
                let (signal, clip) = synthesize(7, &ranges, label, index).unwrap();
                assert!((2..=5).contains(&clip.duration_secs));
                assert_eq!(signal.len(), (SAMPLE_RATE * clip.duration_secs) as usize);
                let (lo, hi) = ranges[label];
                let spec = forward(&signal);
                let mags = spec.magnitudes();
                for tone in &clip.tones {
                    let f = f64::from(tone.frequency_hz);
                    assert!(lo <= f && f < hi);
                    let k = (tone.frequency_hz * clip.duration_secs) as usize;
                    assert!((spec.bin_frequency(k) - f).abs() < 1e-9);
                    // A bin-centred tone dominates its neighbours.
                    assert!(mags[k] > 20.0 * mags[k + 1].max(mags[k - 1]));
                }
                assert_ne!(clip.distractor_label, *label);
            }
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let ranges = class_ranges(&Weights::shipped()).unwrap();
        let a = synthesize(3, &ranges, "classB", 4).unwrap();
        let b = synthesize(3, &ranges, "classB", 4).unwrap();
        assert_eq!(a, b);
        let c = synthesize(4, &ranges, "classB", 4).unwrap();
        assert_ne!(a.0, c.0);
    }
}
