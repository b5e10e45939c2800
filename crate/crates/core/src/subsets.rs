//! Greedy extraction of sufficient, necessary and complete bin sets from a
//! responsibility ranking, plus the inversion and superposition utilities
//! built on them.
//!
//! Bins are added in descending-responsibility order, one step at a time. At
//! every step three conditions are checked independently:
//!
//! * sufficient: the kept bins alone keep the original label with at least
//!   `min_score_ratio` of the original score;
//! * necessary: sufficient, and the spectrum with those bins removed gets a
//!   different label;
//! * complete: necessary, and the kept bins' score equals the original score
//!   to two decimal places.
//!
//! A set is reported at the first step of the first run of `chain_length`
//! consecutive steps for which its condition holds. A run that is still going
//! when the ordering runs out counts as stable. Because each condition implies
//! the previous one, the sets come out nested.

use serde::{Deserialize, Serialize};

use crate::classifier::{Classification, ClassifierHandle};
use crate::error::{Error, Result};
use crate::responsibility::ResponsibilityMap;
use crate::signal::{forward, inverse, mask, BinSet, Spectrum, TimeSignal};

/// Bins added per greedy step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSize {
    /// The finest refinement cell of the responsibility search.
    Cell,
    Bins(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub chain_length: usize,
    pub min_score_ratio: f64,
    pub step: StepSize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            chain_length: 5,
            min_score_ratio: 0.5,
            step: StepSize::Cell,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chain_length == 0 {
            return Err(Error::Config("chain length must be at least 1".into()));
        }
        if !(self.min_score_ratio > 0.0 && self.min_score_ratio <= 1.0) {
            return Err(Error::Config("min score ratio must be in (0, 1]".into()));
        }
        if self.step == StepSize::Bins(0) {
            return Err(Error::Config("step must add at least one bin".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub total_bins: usize,
    pub original: Classification,
    pub sufficient: Option<BinSet>,
    pub at_sufficient: Option<Classification>,
    /// Bins added by the greedy step that completed the sufficient set.
    pub sufficient_final_step: Option<BinSet>,
    pub necessary: Option<BinSet>,
    pub at_necessary: Option<Classification>,
    /// Classification of the spectrum with the necessary set removed.
    pub inverse_of_necessary: Option<Classification>,
    pub complete: Option<BinSet>,
    pub at_complete: Option<Classification>,
    pub steps_evaluated: usize,
    pub query_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl SubsetReport {
    pub fn sufficient_fraction(&self) -> Option<f64> {
        self.sufficient
            .as_ref()
            .map(|s| s.len() as f64 / self.total_bins as f64)
    }
}

#[derive(Debug, Clone)]
struct Snapshot {
    step: usize,
    bins: BinSet,
    at: Classification,
    complement: Option<Classification>,
}

#[derive(Default)]
struct Run {
    start: Option<Snapshot>,
    length: usize,
}

impl Run {
    /// Feeds one step; returns the run's first snapshot once it is stable.
    fn advance(&mut self, holds: bool, snapshot: impl FnOnce() -> Snapshot, chain: usize) -> Option<Snapshot> {
        if !holds {
            self.start = None;
            self.length = 0;
            return None;
        }
        if self.start.is_none() {
            self.start = Some(snapshot());
        }
        self.length += 1;
        (self.length >= chain).then(|| self.start.clone().expect("run has a start"))
    }
}

fn step_ranges(len: usize, step: usize) -> Vec<std::ops::Range<usize>> {
    (0..len.div_ceil(step))
        .map(|i| i * step..((i + 1) * step).min(len))
        .collect()
}

/// Greedy extraction over the ranking of `map`.
pub fn extract(
    spectrum: &Spectrum,
    map: &ResponsibilityMap,
    handle: &mut ClassifierHandle,
    config: &ExtractionConfig,
) -> Result<SubsetReport> {
    config.validate()?;
    if map.len() != spectrum.len() {
        return Err(Error::Incompatible(format!(
            "responsibility map has {} bins, spectrum {}",
            map.len(),
            spectrum.len()
        )));
    }
    let queries_before = handle.query_count();
    let original = handle.classify_spectrum(spectrum)?;
    let threshold = config.min_score_ratio * original.score;
    let total = spectrum.len();

    let ordering = map.ranking();
    let nonzero = map.scores.iter().filter(|&&s| s > 0.0).count();
    let step = match config.step {
        StepSize::Cell => map.cell_size.max(1),
        StepSize::Bins(k) => k,
    };
    let ranges = step_ranges(total, step);

    let mut report = SubsetReport {
        total_bins: total,
        original: original.clone(),
        sufficient: None,
        at_sufficient: None,
        sufficient_final_step: None,
        necessary: None,
        at_necessary: None,
        inverse_of_necessary: None,
        complete: None,
        at_complete: None,
        steps_evaluated: 0,
        query_count: 0,
        diagnostic: None,
    };

    let (mut suff_run, mut nec_run, mut comp_run) = (Run::default(), Run::default(), Run::default());
    for (i, range) in ranges.iter().enumerate() {
        // Sufficient sets must start inside the responsibility-bearing bins.
        if report.sufficient.is_none() && suff_run.start.is_none() && range.start >= nonzero {
            report.diagnostic = Some(format!(
                "no sufficient set within the {nonzero} bins with non-zero responsibility"
            ));
            break;
        }
        report.steps_evaluated = i + 1;
        let bins: BinSet = ordering[..range.end].iter().copied().collect();
        let at = handle.classify_spectrum(&mask(spectrum, &bins)?)?;
        let suff = at.label == original.label && at.score >= threshold;
        let complement = if suff && (report.necessary.is_none() || report.complete.is_none()) {
            let rest = bins.complement(total);
            Some(handle.classify_spectrum(&mask(spectrum, &rest)?)?)
        } else {
            None
        };
        let nec = suff && complement.as_ref().is_some_and(|c| c.label != original.label);
        let comp = nec && at.score_2dp() == original.score_2dp();

        let snap = || Snapshot {
            step: i,
            bins: bins.clone(),
            at: at.clone(),
            complement: complement.clone(),
        };
        let last = i + 1 == ranges.len();
        // At the end of the ordering an ongoing run counts as stable.
        let stable = |run: &mut Run, holds: bool| match run.advance(holds, snap, config.chain_length) {
            None if last && holds => run.start.clone(),
            out => out,
        };

        if let Some(s) = stable(&mut suff_run, suff) {
            if report.sufficient.is_none() {
                report.sufficient_final_step = Some(ordering[ranges[s.step].clone()].iter().copied().collect());
                report.sufficient = Some(s.bins);
                report.at_sufficient = Some(s.at);
            }
        }
        if let Some(s) = stable(&mut nec_run, nec) {
            if report.necessary.is_none() {
                report.necessary = Some(s.bins);
                report.at_necessary = Some(s.at);
                report.inverse_of_necessary = s.complement;
            }
        }
        if let Some(s) = stable(&mut comp_run, comp) {
            if report.complete.is_none() {
                report.complete = Some(s.bins);
                report.at_complete = Some(s.at);
            }
        }
        if report.sufficient.is_some() && report.necessary.is_some() && report.complete.is_some() {
            break;
        }
    }
    report.query_count = handle.query_count() - queries_before;
    Ok(report)
}

/// The "left over" signal: `spectrum` with `subset` removed, and its label.
pub fn invert(
    spectrum: &Spectrum,
    subset: &BinSet,
    handle: &mut ClassifierHandle,
) -> Result<(TimeSignal, Classification)> {
    subset.check_range(spectrum.len())?;
    let rest = subset.complement(spectrum.len());
    let signal = inverse(&mask(spectrum, &rest)?);
    let classification = handle.classify(&signal)?;
    Ok((signal, classification))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub signal: TimeSignal,
    pub classification: Classification,
    pub success: bool,
}

/// Peak level of composed signals.
pub const COMPOSE_PEAK: f32 = 0.99;

/// Superposes masked spectra bin-wise, peak-normalizes the reconstruction
/// and checks whether it still gets `target_label`.
pub fn compose(
    sufficient_spectra: &[Spectrum],
    handle: &mut ClassifierHandle,
    target_label: &str,
) -> Result<Composition> {
    let (first, rest) = sufficient_spectra
        .split_first()
        .ok_or_else(|| Error::Config("nothing to compose".into()))?;
    let sum = rest.iter().try_fold(first.clone(), |acc, s| acc.add(s))?;
    let signal = inverse(&sum).peak_normalized(COMPOSE_PEAK);
    let classification = handle.classify(&signal)?;
    let success = classification.label == target_label;
    Ok(Composition {
        signal,
        classification,
        success,
    })
}

/// Outcome of re-checking a report's sets with fresh classifier queries.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replay {
    pub sufficient: Option<bool>,
    pub necessary: Option<bool>,
    pub complete: Option<bool>,
    /// The sufficient set minus its final greedy step fails the sufficient condition.
    pub locally_minimal: Option<bool>,
    pub nested: bool,
}

impl Replay {
    pub fn all_pass(&self) -> bool {
        self.nested
            && [self.sufficient, self.necessary, self.complete, self.locally_minimal]
                .iter()
                .all(|c| c.unwrap_or(true))
    }
}

/// Re-verifies every set in `report` against its defining conditions.
pub fn replay(
    spectrum: &Spectrum,
    report: &SubsetReport,
    handle: &mut ClassifierHandle,
    config: &ExtractionConfig,
) -> Result<Replay> {
    let original = handle.classify_spectrum(spectrum)?;
    let threshold = config.min_score_ratio * original.score;
    let total = spectrum.len();
    let keeps = |set: &BinSet, handle: &mut ClassifierHandle| -> Result<(bool, Classification)> {
        let at = handle.classify_spectrum(&mask(spectrum, set)?)?;
        Ok((at.label == original.label && at.score >= threshold, at))
    };

    let mut out = Replay {
        nested: true,
        ..Default::default()
    };
    if let Some(s) = &report.sufficient {
        out.sufficient = Some(keeps(s, handle)?.0);
        if let Some(last) = &report.sufficient_final_step {
            let prefix: BinSet = s.iter().filter(|&k| !last.contains(k)).collect();
            out.locally_minimal = Some(prefix.is_empty() || !keeps(&prefix, handle)?.0);
        }
    }
    if let Some(n) = &report.necessary {
        let (suff, _) = keeps(n, handle)?;
        let left = handle.classify_spectrum(&mask(spectrum, &n.complement(total))?)?;
        out.necessary = Some(suff && left.label != original.label);
    }
    if let Some(c) = &report.complete {
        let (suff, at) = keeps(c, handle)?;
        let left = handle.classify_spectrum(&mask(spectrum, &c.complement(total))?)?;
        out.complete = Some(suff && left.label != original.label && at.score_2dp() == original.score_2dp());
    }
    let subset = |a: &Option<BinSet>, b: &Option<BinSet>| match (a, b) {
        (Some(a), Some(b)) => a.is_subset(b),
        (None, Some(_)) => false,
        _ => true,
    };
    out.nested = subset(&report.sufficient, &report.necessary)
        && subset(&report.necessary, &report.complete)
        && subset(&report.sufficient, &report.complete);
    Ok(out)
}

/// Zero-pads `signal` to `len` samples and returns the spectrum of `set`'s
/// reconstruction, so that sets from clips of different lengths can be
/// superposed.
pub fn padded_subset_spectrum(signal: &TimeSignal, set: &BinSet, len: usize) -> Result<Spectrum> {
    let masked = inverse(&mask(&forward(signal), set)?);
    Ok(forward(&masked.resized(len)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::responsibility::{accumulate, PartitionConfig};

    fn impulse_spectrum(bins: usize) -> Spectrum {
        let n = 2 * (bins - 1);
        let samples: Vec<f64> = (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        forward(&TimeSignal::from_f64(&samples, n as u32).unwrap())
    }

    fn present(sig: &TimeSignal) -> Vec<bool> {
        forward(sig).bins().iter().map(|c| c.norm() > 0.5).collect()
    }

    fn full_depth(parts: usize) -> PartitionConfig {
        PartitionConfig {
            parts,
            max_depth: 8,
            iterations: 5,
            epsilon: 1e-9,
            seed: 1,
        }
    }

    #[test]
    fn threshold_toy_recovers_single_bin() {
        let spec = impulse_spectrum(8);
        let mut h = ClassifierHandle::from_fn(|s: &TimeSignal| {
            Classification::new(if present(s)[3] { "yes" } else { "no" }, 1.0)
        });
        let map = accumulate(&mut h, &spec, &full_depth(2)).unwrap();
        let report = extract(&spec, &map, &mut h, &ExtractionConfig::default()).unwrap();
        assert_eq!(report.sufficient.as_ref().unwrap().as_slice(), &[3]);
        assert_eq!(report.necessary.as_ref().unwrap().as_slice(), &[3]);
        assert_eq!(report.complete.as_ref().unwrap().as_slice(), &[3]);
        assert_eq!(report.inverse_of_necessary.as_ref().unwrap().label, "no");
        let r = replay(&spec, &report, &mut h, &ExtractionConfig::default()).unwrap();
        assert!(r.all_pass(), "{r:?}");
    }

    #[test]
    fn accept_anything_has_no_necessary_set() {
        let spec = impulse_spectrum(12);
        let mut h = ClassifierHandle::from_fn(|_: &TimeSignal| Classification::new("any", 0.8));
        let map = accumulate(&mut h, &spec, &full_depth(3)).unwrap();
        let report = extract(&spec, &map, &mut h, &ExtractionConfig::default()).unwrap();
        assert_eq!(report.sufficient.as_ref().unwrap().len(), 1);
        assert!(report.necessary.is_none());
        assert!(report.complete.is_none());
    }

    #[test]
    fn conjunction_toy_gives_both_bins() {
        // "yes" iff bins 2 and 5 are both present.
        let spec = impulse_spectrum(10);
        let mut h = ClassifierHandle::from_fn(|s: &TimeSignal| {
            let p = present(s);
            let yes = p[2] && p[5];
            Classification::new(if yes { "yes" } else { "no" }, 1.0)
        });
        let map = accumulate(&mut h, &spec, &full_depth(2)).unwrap();
        let report = extract(&spec, &map, &mut h, &ExtractionConfig::default()).unwrap();
        assert_eq!(report.sufficient.as_ref().unwrap().as_slice(), &[2, 5]);
        let r = replay(&spec, &report, &mut h, &ExtractionConfig::default()).unwrap();
        assert!(r.all_pass());
    }

    #[test]
    fn no_responsibility_means_no_sets() {
        let spec = impulse_spectrum(6);
        let mut h = ClassifierHandle::from_fn(|_: &TimeSignal| Classification::new("x", 1.0));
        let map = ResponsibilityMap {
            scores: vec![0.0; 6],
            iterations_run: 1,
            emd_trace: vec![None],
            cell_size: 1,
            complete: true,
            query_count: 0,
        };
        let report = extract(&spec, &map, &mut h, &ExtractionConfig::default()).unwrap();
        assert!(report.sufficient.is_none());
        assert!(report.diagnostic.is_some());
        assert_eq!(report.query_count, 1);
    }

    #[test]
    fn invert_edges() {
        let spec = impulse_spectrum(6);
        let mut h = ClassifierHandle::from_fn(|s: &TimeSignal| {
            Classification::new(if s.peak() > 0.0 { "sound" } else { "quiet" }, 1.0)
        });
        let (sig, c) = invert(&spec, &BinSet::empty(), &mut h).unwrap();
        assert_eq!(sig, inverse(&spec));
        assert_eq!(c.label, "sound");
        let (sig, c) = invert(&spec, &BinSet::full(6), &mut h).unwrap();
        assert!(sig.samples().iter().all(|&s| s == 0.0));
        assert_eq!(c.label, "quiet");
    }

    #[test]
    fn compose_checks_lengths_and_normalizes() {
        let a = impulse_spectrum(6);
        let b = impulse_spectrum(8);
        let mut h = ClassifierHandle::from_fn(|_: &TimeSignal| Classification::new("x", 1.0));
        assert!(compose(&[a.clone(), b], &mut h, "x").is_err());
        assert!(compose(&[], &mut h, "x").is_err());
        let one = compose(std::slice::from_ref(&a), &mut h, "x").unwrap();
        let three = compose(&[a.clone(), a.clone(), a], &mut h, "x").unwrap();
        assert!(one.success);
        assert!((one.signal.peak() - COMPOSE_PEAK).abs() < 1e-6);
        assert!(one.signal.distance(&three.signal).0 < 1e-6);
    }
}
