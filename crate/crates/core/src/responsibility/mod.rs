//! Approximate per-bin sufficient responsibility by randomized partition
//! interventions.
//!
//! One pass splits the spectrum's bins at random into `p` parts, classifies the
//! reconstruction of every non-empty combination of parts, and credits each
//! bin of a *minimal* passing combination with `1 / |combination|`. Parts that
//! received credit are split again, up to `max_depth` times, with the rest of
//! their minimal combination kept in place as context. Passes are repeated
//! with fresh partitions until the Earth Mover's Distance between the newest
//! pass and the running total falls below `epsilon`.

mod emd;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{Classification, ClassifierHandle};
use crate::error::{Error, Result};
use crate::signal::{mask, BinSet, Spectrum};

pub use emd::earth_movers_distance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    /// Parts per split (`p`).
    pub parts: usize,
    /// Number of refinement levels below the initial split.
    pub max_depth: usize,
    /// Maximum number of passes.
    pub iterations: usize,
    /// EMD threshold (in bins) that stops accumulation.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            parts: 4,
            max_depth: 3,
            iterations: 20,
            epsilon: 150.0,
            seed: 0,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.parts < 2 {
            return Err(Error::Config("partition needs at least 2 parts".into()));
        }
        if self.parts > 16 {
            return Err(Error::Config(
                "more than 16 parts means over 65535 queries per split".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::Config("need at least one iteration".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Nominal size of the finest refinement cell for a spectrum of `bins` bins.
    pub fn cell_size(&self, bins: usize) -> usize {
        let mut cell = bins;
        for _ in 0..=self.max_depth {
            cell = cell.div_ceil(self.parts);
        }
        cell.max(1)
    }
}

/// Accumulated responsibility per spectrum bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsibilityMap {
    pub scores: Vec<f64>,
    pub iterations_run: usize,
    /// EMD between each pass and the running total before it was added;
    /// `None` when undefined (empty running total).
    pub emd_trace: Vec<Option<f64>>,
    /// Nominal finest-cell size of the partition search.
    pub cell_size: usize,
    /// False if the query budget ran out part way.
    pub complete: bool,
    pub query_count: u64,
}

impl ResponsibilityMap {
    fn empty(bins: usize, cell_size: usize) -> Self {
        Self {
            scores: vec![0.0; bins],
            iterations_run: 0,
            emd_trace: Vec::new(),
            cell_size,
            complete: true,
            query_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Bin indices by descending score, ties by ascending index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        order
    }

    pub fn nonzero(&self) -> BinSet {
        (0..self.scores.len()).filter(|&k| self.scores[k] > 0.0).collect()
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }

    /// `bin_index,frequency_hz,score` rows.
    pub fn to_csv(&self, spectrum: &Spectrum) -> String {
        let mut out = String::from("bin_index,frequency_hz,score\n");
        for (k, s) in self.scores.iter().enumerate() {
            let _ = writeln!(out, "{k},{},{s}", spectrum.bin_frequency(k));
        }
        out
    }
}

struct Search<'a> {
    spectrum: &'a Spectrum,
    handle: &'a mut ClassifierHandle,
    target: &'a str,
    parts: usize,
    max_depth: usize,
    rng: ChaCha8Rng,
    scores: Vec<f64>,
    queries: u64,
    exhausted: bool,
}

impl Search<'_> {
    fn passes(&mut self, keep: &BinSet) -> Result<Option<bool>> {
        let masked = mask(self.spectrum, keep)?;
        self.queries += 1;
        match self.handle.classify_spectrum(&masked) {
            Ok(c) => Ok(Some(c.label == self.target)),
            Err(Error::BudgetExhausted { .. }) => {
                self.queries -= 1;
                self.exhausted = true;
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    fn refine(&mut self, cell: &[usize], context: &[usize], depth: usize) -> Result<()> {
        let mut shuffled = cell.to_vec();
        shuffled.shuffle(&mut self.rng);
        let k = self.parts.min(shuffled.len());
        let parts: Vec<Vec<usize>> = (0..k)
            .map(|j| shuffled.iter().skip(j).step_by(k).copied().collect())
            .collect();

        let combos = 1usize << k;
        let mut passing = vec![false; combos];
        for combo in 1..combos {
            let keep: BinSet = context.iter().copied().chain(members(combo, &parts)).collect();
            match self.passes(&keep)? {
                Some(p) => passing[combo] = p,
                None => return Ok(()),
            }
        }

        // Minimal: passes while no strict sub-combination does.
        let minimal: Vec<usize> = (1..combos)
            .filter(|&c| passing[c] && !strict_submasks(c).any(|s| passing[s]))
            .collect();

        for &combo in &minimal {
            let size = context.len() + members(combo, &parts).count();
            let credit = 1.0 / size as f64;
            for bin in members(combo, &parts) {
                self.scores[bin] += credit;
            }
        }

        if depth >= self.max_depth {
            return Ok(());
        }
        for (j, part) in parts.iter().enumerate() {
            if part.len() < 2 {
                continue;
            }
            // Refine within the smallest minimal combination containing this part.
            let Some(&combo) = minimal
                .iter()
                .filter(|&&c| c & (1 << j) != 0)
                .min_by_key(|&&c| (members(c, &parts).count(), c))
            else {
                continue;
            };
            let child_context: Vec<usize> = context
                .iter()
                .copied()
                .chain(members(combo & !(1 << j), &parts))
                .collect();
            self.refine(part, &child_context, depth + 1)?;
            if self.exhausted {
                return Ok(());
            }
        }
        Ok(())
    }
}

fn members<'a>(combo: usize, parts: &'a [Vec<usize>]) -> impl Iterator<Item = usize> + 'a {
    parts
        .iter()
        .enumerate()
        .filter(move |(j, _)| combo & (1 << j) != 0)
        .flat_map(|(_, p)| p.iter().copied())
}

/// Non-empty strict submasks of `mask`.
fn strict_submasks(mask: usize) -> impl Iterator<Item = usize> {
    let mut sub = mask;
    std::iter::from_fn(move || {
        sub = (sub - 1) & mask;
        (sub != 0).then_some(sub)
    })
}

fn single_pass(
    spectrum: &Spectrum,
    handle: &mut ClassifierHandle,
    config: &PartitionConfig,
    target: &Classification,
    stream: u64,
) -> Result<(Vec<f64>, u64, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let mut search = Search {
        spectrum,
        handle,
        target: &target.label,
        parts: config.parts,
        max_depth: config.max_depth,
        rng,
        scores: vec![0.0; spectrum.len()],
        queries: 0,
        exhausted: false,
    };
    let all: Vec<usize> = (0..spectrum.len()).collect();
    search.refine(&all, &[], 0)?;
    Ok((search.scores, search.queries, !search.exhausted))
}

/// One randomized partition pass, seeded by `config.seed`.
///
/// `target` must be the classification of the unmodified spectrum. If the
/// handle's budget runs out the partial map is returned with `complete = false`.
pub fn calculate_responsibility(
    spectrum: &Spectrum,
    handle: &mut ClassifierHandle,
    config: &PartitionConfig,
    target: &Classification,
) -> Result<ResponsibilityMap> {
    config.validate()?;
    let (scores, queries, complete) = single_pass(spectrum, handle, config, target, 0)?;
    Ok(ResponsibilityMap {
        scores,
        iterations_run: 1,
        emd_trace: Vec::new(),
        cell_size: config.cell_size(spectrum.len()),
        complete,
        query_count: queries,
    })
}

/// Repeats [`calculate_responsibility`] with fresh partitions, summing the
/// passes, until the EMD between a pass and the running total is at most
/// `epsilon` or `iterations` passes have run. Classifies `spectrum` first to
/// get the target.
pub fn accumulate(
    handle: &mut ClassifierHandle,
    spectrum: &Spectrum,
    config: &PartitionConfig,
) -> Result<ResponsibilityMap> {
    let target = handle.classify_spectrum(spectrum)?;
    let mut map = accumulate_for(handle, spectrum, config, &target)?;
    map.query_count += 1;
    Ok(map)
}

/// [`accumulate`] with an already known target classification.
pub fn accumulate_for(
    handle: &mut ClassifierHandle,
    spectrum: &Spectrum,
    config: &PartitionConfig,
    target: &Classification,
) -> Result<ResponsibilityMap> {
    config.validate()?;
    let mut map = ResponsibilityMap::empty(spectrum.len(), config.cell_size(spectrum.len()));
    for i in 0..config.iterations {
        let (pass, queries, complete) = single_pass(spectrum, handle, config, target, i as u64)?;
        map.query_count += queries;
        map.iterations_run += 1;

        let emd = if map.total() > 0.0 && pass.iter().sum::<f64>() > 0.0 {
            Some(earth_movers_distance(&pass, &map.scores)?)
        } else {
            None
        };
        map.emd_trace.push(emd);
        for (acc, v) in map.scores.iter_mut().zip(&pass) {
            *acc += v;
        }
        if !complete {
            map.complete = false;
            break;
        }
        if emd.unwrap_or(f64::INFINITY) <= config.epsilon {
            break;
        }
    }
    Ok(map)
}
