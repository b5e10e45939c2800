//! Minimal frequency-domain manipulations that flip the classifier's label.
//!
//! [`fourier_attack`] scales the most responsible sufficient bins of the whole
//! spectrum: first it grows the number of bins under the strongest mutation
//! until the label flips, then it looks for the weakest mutation that still
//! flips at that size. [`stft_attack`] replays the winning mutation inside
//! as few STFT frames as possible, escalating the frame size on failure.

use std::cmp::Ordering;

use realfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::classifier::{Classification, ClassifierHandle};
use crate::error::{Error, Result};
use crate::responsibility::ResponsibilityMap;
use crate::signal::{inverse, istft, map_bins, stft, BinSet, Spectrum, TimeSignal};

pub const DEFAULT_DELTAS: [f64; 6] = [0.0, 0.25, 0.5, 2.0, 4.0, 8.0];
pub const DEFAULT_FRAMES: [usize; 3] = [256, 512, 1024];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    /// Amplitude scalars `Δ`; any order, sorted by [`perturbation_strength`].
    pub deltas: Vec<f64>,
    /// Maximum number of alterable frequencies.
    pub budget: usize,
    /// Phase rotation applied along with each scalar. Zero means pure
    /// amplitude mutations.
    #[serde(default)]
    pub phase_radians: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            deltas: DEFAULT_DELTAS.to_vec(),
            budget: 1000,
            phase_radians: 0.0,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() {
            return Err(Error::Config("need at least one mutation".into()));
        }
        if self.deltas.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Config("mutations must be finite and non-negative".into()));
        }
        if self.budget == 0 {
            return Err(Error::Config("frequency budget must be positive".into()));
        }
        if !self.phase_radians.is_finite() {
            return Err(Error::Config("phase must be finite".into()));
        }
        Ok(())
    }

    /// Deduplicated mutations from weakest to strongest.
    pub fn ordered_deltas(&self) -> Vec<f64> {
        let mut d = self.deltas.clone();
        d.sort_by(compare_strength);
        d.dedup();
        d
    }

    fn factor(&self, delta: f64) -> Complex64 {
        if self.phase_radians == 0.0 {
            Complex64::new(delta, 0.0)
        } else {
            Complex64::from_polar(delta, self.phase_radians)
        }
    }
}

/// How far a scalar moves a bin's amplitude: `|ln δ|`, with deletion (`δ = 0`)
/// the strongest possible mutation.
pub fn perturbation_strength(delta: f64) -> f64 {
    if delta == 0.0 {
        f64::INFINITY
    } else {
        delta.ln().abs()
    }
}

fn compare_strength(a: &f64, b: &f64) -> Ordering {
    perturbation_strength(*a)
        .total_cmp(&perturbation_strength(*b))
        .then(a.total_cmp(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationPlan {
    /// Mutations from weakest to strongest.
    pub deltas: Vec<f64>,
    pub chosen_delta: Option<f64>,
    /// Full-spectrum bins that were mutated.
    pub bins_modified: BinSet,
    pub n_frequencies: usize,
    pub budget: usize,
    #[serde(default)]
    pub phase_radians: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub success: bool,
    #[serde(skip)]
    pub altered: Option<TimeSignal>,
    pub before: Classification,
    pub after: Option<Classification>,
    pub plan: MutationPlan,
    /// STFT bins that were mutated (STFT attack only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stft_bins: Option<BinSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_modified: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_size_used: Option<usize>,
    /// Max absolute time-domain change.
    pub perturbation_linf: Option<f64>,
    /// L2 norm of the time-domain change.
    pub perturbation_l2: Option<f64>,
    pub query_count: u64,
}

impl AttackResult {
    fn failed(before: Classification, plan: MutationPlan, query_count: u64) -> Self {
        Self {
            success: false,
            altered: None,
            before,
            after: None,
            plan,
            stft_bins: None,
            frames_modified: None,
            frame_size_used: None,
            perturbation_linf: None,
            perturbation_l2: None,
            query_count,
        }
    }
}

/// Sufficient bins by descending responsibility, ties by ascending index.
fn rank_sufficient(map: &ResponsibilityMap, sufficient: &BinSet) -> Vec<usize> {
    let mut ranked: Vec<usize> = sufficient.iter().collect();
    ranked.sort_by(|&a, &b| map.scores[b].total_cmp(&map.scores[a]).then(a.cmp(&b)));
    ranked
}

/// Whole-spectrum attack over the sufficient bins of an analysis.
///
/// Failure to flip within the budget is a normal result with `success = false`.
pub fn fourier_attack(
    spectrum: &Spectrum,
    map: &ResponsibilityMap,
    sufficient: &BinSet,
    handle: &mut ClassifierHandle,
    config: &PlanConfig,
) -> Result<AttackResult> {
    config.validate()?;
    if sufficient.is_empty() {
        return Err(Error::Config("attack needs a non-empty sufficient set".into()));
    }
    sufficient.check_range(spectrum.len())?;
    if map.len() != spectrum.len() {
        return Err(Error::Incompatible("responsibility map does not match spectrum".into()));
    }
    let start = handle.query_count();
    let before = handle.classify_spectrum(spectrum)?;
    let deltas = config.ordered_deltas();
    let strongest = *deltas.last().expect("validated non-empty");
    let ranked = rank_sufficient(map, sufficient);
    let mut plan = MutationPlan {
        deltas: deltas.clone(),
        chosen_delta: None,
        bins_modified: BinSet::empty(),
        n_frequencies: 0,
        budget: config.budget,
        phase_radians: config.phase_radians,
    };

    let flips = |handle: &mut ClassifierHandle, bins: &BinSet, delta: f64| -> Result<(Spectrum, Classification)> {
        let altered = spectrum.multiplied(bins, config.factor(delta))?;
        let c = handle.classify_spectrum(&altered)?;
        Ok((altered, c))
    };

    // Grow the set of mutated bins under the strongest mutation.
    let mut size = None;
    for k in 1..=ranked.len().min(config.budget) {
        let bins: BinSet = ranked[..k].iter().copied().collect();
        let (_, c) = flips(handle, &bins, strongest)?;
        if c.label != before.label {
            size = Some(k);
            break;
        }
    }
    let Some(n) = size else {
        return Ok(AttackResult::failed(before, plan, handle.query_count() - start));
    };

    // Weakest mutation that still flips with n bins.
    let bins: BinSet = ranked[..n].iter().copied().collect();
    plan.bins_modified = bins.clone();
    plan.n_frequencies = n;
    for &delta in &deltas {
        let (altered, c) = flips(handle, &bins, delta)?;
        if c.label != before.label {
            let source = inverse(spectrum);
            let altered = inverse(&altered);
            let (linf, l2) = source.distance(&altered);
            plan.chosen_delta = Some(delta);
            return Ok(AttackResult {
                success: true,
                altered: Some(altered),
                before,
                after: Some(c),
                plan,
                stft_bins: None,
                frames_modified: None,
                frame_size_used: None,
                perturbation_linf: Some(linf),
                perturbation_l2: Some(l2),
                query_count: handle.query_count() - start,
            });
        }
    }
    // Only reachable with a non-deterministic classifier.
    Ok(AttackResult::failed(before, plan, handle.query_count() - start))
}

/// Frame order for the STFT attack: descending total magnitude over
/// `bins`, ties by earlier frame.
pub fn frame_order(frames: &[Vec<Complex64>], bins: &BinSet) -> Vec<usize> {
    let energy: Vec<f64> = frames.iter().map(|f| bins.iter().map(|k| f[k].norm()).sum()).collect();
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]).then(a.cmp(&b)));
    order
}

/// Confines a successful Fourier attack's mutation to as few STFT frames as
/// possible. Frame sizes are tried in `frame_schedule` order, moving to the
/// next only if the current one cannot flip the label with at most
/// `plan.budget` mutated STFT coefficients.
pub fn stft_attack(
    signal: &TimeSignal,
    attack: &AttackResult,
    handle: &mut ClassifierHandle,
    frame_schedule: &[usize],
) -> Result<AttackResult> {
    let start = handle.query_count();
    let before = attack.before.clone();
    let plan = attack.plan.clone();
    let Some(delta) = plan.chosen_delta else {
        return Ok(AttackResult::failed(before, plan, 0));
    };
    let factor = if plan.phase_radians == 0.0 {
        Complex64::new(delta, 0.0)
    } else {
        Complex64::from_polar(delta, plan.phase_radians)
    };

    for &frame_size in frame_schedule {
        if frame_size > signal.len() {
            log::debug!("skipping frame size {frame_size} for a {}-sample signal", signal.len());
            continue;
        }
        let mut spectrogram = stft(signal, frame_size, frame_size / 2)?;
        let stft_bins = map_bins(&plan.bins_modified, &spectrogram);
        let order = frame_order(spectrogram.frames(), &stft_bins);
        let max_frames = (plan.budget / stft_bins.len().max(1)).min(order.len());
        for (m, &frame) in order.iter().take(max_frames).enumerate() {
            spectrogram.scale_cells(&[frame], &stft_bins, factor)?;
            let altered = istft(&spectrogram);
            let c = handle.classify(&altered)?;
            if c.label != before.label {
                let (linf, l2) = signal.distance(&altered);
                return Ok(AttackResult {
                    success: true,
                    altered: Some(altered),
                    before,
                    after: Some(c),
                    plan,
                    stft_bins: Some(stft_bins),
                    frames_modified: Some(m + 1),
                    frame_size_used: Some(frame_size),
                    perturbation_linf: Some(linf),
                    perturbation_l2: Some(l2),
                    query_count: handle.query_count() - start,
                });
            }
        }
    }
    Ok(AttackResult::failed(before, plan, handle.query_count() - start))
}
