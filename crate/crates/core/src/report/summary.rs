use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{report_paths, CompositionReport, FileReport, COMPOSITION_FILE};
use crate::error::{Error, Result};

pub const SUMMARY_FILE: &str = "summary.json";

/// Magnitude statistics of the sufficient-set score shift.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShiftStats {
    pub n: usize,
    pub mean_abs: f64,
    /// Population standard deviation of the absolute shift.
    pub std_abs: f64,
    pub up: usize,
    pub down: usize,
    pub unchanged: usize,
}

impl ShiftStats {
    fn from_shifts(shifts: &[f64]) -> Self {
        let n = shifts.len();
        if n == 0 {
            return Self::default();
        }
        let abs: Vec<f64> = shifts.iter().map(|s| s.abs()).collect();
        let mean_abs = abs.iter().sum::<f64>() / n as f64;
        let var = abs.iter().map(|a| (a - mean_abs).powi(2)).sum::<f64>() / n as f64;
        Self {
            n,
            mean_abs,
            std_abs: var.sqrt(),
            up: shifts.iter().filter(|&&s| s > 0.0).count(),
            down: shifts.iter().filter(|&&s| s < 0.0).count(),
            unchanged: shifts.iter().filter(|&&s| s == 0.0).count(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackStats {
    /// Clips with a sufficient set, i.e. where an attack was run.
    pub attempted: usize,
    pub success: usize,
    pub one_frequency: usize,
    pub within_five: usize,
    /// Successful attacks that still flip after a float32 / pcm16 wav round trip.
    pub float32_preserved: usize,
    pub pcm16_preserved: usize,
}

impl AttackStats {
    fn rate(part: usize, whole: usize) -> Option<f64> {
        (whole > 0).then(|| part as f64 / whole as f64)
    }

    pub fn success_rate(&self) -> Option<f64> {
        Self::rate(self.success, self.attempted)
    }

    pub fn one_frequency_share(&self) -> Option<f64> {
        Self::rate(self.one_frequency, self.attempted)
    }

    pub fn within_five_share(&self) -> Option<f64> {
        Self::rate(self.within_five, self.attempted)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StftStats {
    pub attempted: usize,
    pub success: usize,
    /// Successes by frame size used.
    pub by_frame_size: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SetCounts {
    pub clips: usize,
    pub sufficient: usize,
    pub necessary: usize,
    pub complete: usize,
    pub replay_pass: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub model: String,
    pub reports: usize,
    /// Per original label: mean percentage of bins in the sufficient set.
    pub sufficiency_percent: BTreeMap<String, f64>,
    pub sets: BTreeMap<String, SetCounts>,
    /// Per original label: label of the signal with the sufficient set removed.
    pub inversion: BTreeMap<String, BTreeMap<String, usize>>,
    pub score_shift: ShiftStats,
    /// Per label: whether the superposed sufficient signals kept the label.
    pub composition: BTreeMap<String, bool>,
    pub attack: BTreeMap<String, AttackStats>,
    pub attack_total: AttackStats,
    pub stft_attack: BTreeMap<String, StftStats>,
    pub stft_total: StftStats,
    pub mean_queries: f64,
}

fn add_attack(stats: &mut AttackStats, r: &FileReport) {
    let Some(a) = &r.attack else { return };
    stats.attempted += 1;
    if a.success {
        stats.success += 1;
        stats.one_frequency += usize::from(a.plan.n_frequencies == 1);
        stats.within_five += usize::from(a.plan.n_frequencies <= 5);
    }
    if let Some(f) = &r.attack_export {
        stats.float32_preserved += usize::from(f.float32_flipped);
        stats.pcm16_preserved += usize::from(f.pcm16_flipped);
    }
}

fn add_stft(stats: &mut StftStats, r: &FileReport) {
    let Some(s) = &r.stft_attack else { return };
    stats.attempted += 1;
    if s.success {
        stats.success += 1;
        if let Some(w) = s.frame_size_used {
            *stats.by_frame_size.entry(w).or_default() += 1;
        }
    }
}

/// Pure aggregation of already loaded reports.
pub fn aggregate(reports: &[FileReport], composition: Option<&CompositionReport>) -> CorpusSummary {
    let mut summary = CorpusSummary {
        model: reports.first().map(|r| r.config.model.to_string()).unwrap_or_default(),
        reports: reports.len(),
        ..Default::default()
    };
    let mut fractions: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut shifts = Vec::new();
    for r in reports {
        let label = r.subsets.original.label.clone();
        let sets = summary.sets.entry(label.clone()).or_default();
        sets.clips += 1;
        sets.sufficient += usize::from(r.subsets.sufficient.is_some());
        sets.necessary += usize::from(r.subsets.necessary.is_some());
        sets.complete += usize::from(r.subsets.complete.is_some());
        sets.replay_pass += usize::from(r.replay.all_pass());
        if let Some(f) = r.subsets.sufficient_fraction() {
            fractions.entry(label.clone()).or_default().push(100.0 * f);
        }
        if let Some(inv) = &r.inverse {
            *summary
                .inversion
                .entry(label.clone())
                .or_default()
                .entry(inv.label.clone())
                .or_default() += 1;
        }
        shifts.extend(r.score_shift);
        add_attack(summary.attack.entry(label.clone()).or_default(), r);
        add_attack(&mut summary.attack_total, r);
        if r.stft_attack.is_some() {
            add_stft(summary.stft_attack.entry(label).or_default(), r);
            add_stft(&mut summary.stft_total, r);
        }
    }
    summary.sufficiency_percent = fractions
        .into_iter()
        .map(|(l, v)| (l, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    summary.score_shift = ShiftStats::from_shifts(&shifts);
    if let Some(c) = composition {
        summary.composition = c.classes.iter().map(|(l, c)| (l.clone(), c.success)).collect();
    }
    if !reports.is_empty() {
        summary.mean_queries = reports.iter().map(|r| r.query_count as f64).sum::<f64>() / reports.len() as f64;
    }
    summary
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Table CSVs keyed by file name. Rows are model × label.
pub fn tables(summary: &CorpusSummary) -> Vec<(&'static str, String)> {
    let m = &summary.model;
    let mut sufficiency = String::from("model,label,clips,mean_percent_bins,necessary,complete\n");
    for (label, sets) in &summary.sets {
        let pct = opt(summary.sufficiency_percent.get(label).copied());
        let _ = writeln!(
            sufficiency,
            "{m},{label},{},{pct},{},{}",
            sets.clips, sets.necessary, sets.complete
        );
    }
    let mut inversion = String::from("model,label,inverse_label,count\n");
    for (label, hist) in &summary.inversion {
        for (inv, n) in hist {
            let _ = writeln!(inversion, "{m},{label},{inv},{n}");
        }
    }
    let s = &summary.score_shift;
    let completeness = format!(
        "model,n,mean_abs_shift,std_abs_shift,up,down,unchanged\n{m},{},{},{},{},{},{}\n",
        s.n, s.mean_abs, s.std_abs, s.up, s.down, s.unchanged
    );
    let mut composition = String::from("model,label,success\n");
    for (label, ok) in &summary.composition {
        let _ = writeln!(composition, "{m},{label},{}", u8::from(*ok));
    }
    let mut attack = String::from(
        "model,label,attempted,success,success_rate,one_frequency_share,within_five_share,float32_preserved,pcm16_preserved\n",
    );
    let all = "all".to_string();
    let rows = summary
        .attack
        .iter()
        .chain(std::iter::once((&all, &summary.attack_total)));
    for (label, a) in rows {
        let _ = writeln!(
            attack,
            "{m},{label},{},{},{},{},{},{},{}",
            a.attempted,
            a.success,
            opt(a.success_rate()),
            opt(a.one_frequency_share()),
            opt(a.within_five_share()),
            a.float32_preserved,
            a.pcm16_preserved
        );
    }
    let sizes: Vec<usize> = {
        let mut s: Vec<usize> = summary
            .stft_total
            .by_frame_size
            .keys()
            .copied()
            .chain(
                summary
                    .stft_attack
                    .values()
                    .flat_map(|s| s.by_frame_size.keys().copied()),
            )
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let mut stft = String::from("model,label,attempted,success");
    for w in &sizes {
        let _ = write!(stft, ",frame_{w}");
    }
    stft.push('\n');
    let rows = summary
        .stft_attack
        .iter()
        .chain(std::iter::once((&all, &summary.stft_total)));
    for (label, st) in rows {
        let _ = write!(stft, "{m},{label},{},{}", st.attempted, st.success);
        for w in &sizes {
            let _ = write!(stft, ",{}", st.by_frame_size.get(w).copied().unwrap_or(0));
        }
        stft.push('\n');
    }
    vec![
        ("sufficiency.csv", sufficiency),
        ("inversion.csv", inversion),
        ("completeness.csv", completeness),
        ("composition.csv", composition),
        ("attack.csv", attack),
        ("stft_attack.csv", stft),
    ]
}

/// Aggregates every report in `report_dir` (and `composition.json` if present)
/// and writes `summary.json` plus the table CSVs next to them.
pub fn summarize(report_dir: impl AsRef<Path>) -> Result<CorpusSummary> {
    let dir = report_dir.as_ref();
    let paths = report_paths(dir)?;
    if paths.is_empty() {
        return Err(Error::Config(format!("no reports in {}", dir.display())));
    }
    let reports = paths.iter().map(FileReport::load).collect::<Result<Vec<_>>>()?;
    let composition_path = dir.join(COMPOSITION_FILE);
    let composition: Option<CompositionReport> = if composition_path.exists() {
        Some(serde_json::from_str(&fs::read_to_string(composition_path)?)?)
    } else {
        None
    };
    let summary = aggregate(&reports, composition.as_ref());
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    for (name, csv) in tables(&summary) {
        fs::write(dir.join(name), csv)?;
    }
    Ok(summary)
}
