//! Batch harness: per-file analysis reports, exported artifacts, the
//! same-label composition experiment and corpus summaries.
//!
//! Each input produces `<stem>.report.json` in the output directory. Reports
//! carry only deterministic values, so two runs with the same configuration
//! produce byte-identical reports; wall-clock timings go to `timings.csv`.

mod compose;
mod summary;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attacks::{fourier_attack, stft_attack, AttackResult, PlanConfig, DEFAULT_FRAMES};
use crate::classifier::{BridgeOptions, Classification, ClassifierHandle, ModelSpec};
use crate::error::{Error, Result};
use crate::responsibility::{accumulate, PartitionConfig, ResponsibilityMap};
use crate::signal::{
    forward, inverse, load_wav, mask, save_wav, stft, wav_roundtrip, BinSet, Spectrum, TimeSignal, WavEncoding,
};
use crate::subsets::{extract, invert, replay, ExtractionConfig, Replay, SubsetReport};

pub use compose::{compose_reports, ClassComposition, CompositionReport, COMPOSITION_FILE};
pub use summary::{
    aggregate, summarize, tables, AttackStats, CorpusSummary, SetCounts, ShiftStats, StftStats, SUMMARY_FILE,
};

pub const REPORT_SUFFIX: &str = ".report.json";
pub const ERRORS_FILE: &str = "errors.json";
pub const TIMINGS_FILE: &str = "timings.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportConfig {
    /// Stage reconstructions as float32 wavs (plus pcm16 for attacks).
    pub wav: bool,
    /// Responsibility, waveform and spectrogram CSVs.
    pub csv: bool,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { wav: false, csv: true }
    }
}

/// Which pipeline stages to run after extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub attack: bool,
    pub stft_attack: bool,
    /// Run the STFT attack even when the Fourier attack failed.
    pub stft_after_failure: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            attack: true,
            stft_attack: true,
            stft_after_failure: false,
        }
    }
}

/// Everything that determines a run's output. Embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub model: ModelSpec,
    pub bridge: BridgeOptions,
    /// `seed` is replaced per file, see [`file_seed`].
    pub partition: PartitionConfig,
    pub extraction: ExtractionConfig,
    pub plan: PlanConfig,
    pub frames: Vec<usize>,
    pub stages: Stages,
    /// Not serialized, so reports do not depend on where they were written.
    #[serde(skip)]
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Per-file classifier query budget.
    pub query_budget: Option<u64>,
    pub export: ExportConfig,
    /// Run the same-label composition experiment after the per-file pass.
    pub compose: bool,
}

impl RunConfig {
    pub fn new(inputs: Vec<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            inputs,
            model: ModelSpec::Builtin,
            bridge: BridgeOptions::default(),
            partition: PartitionConfig::default(),
            extraction: ExtractionConfig::default(),
            plan: PlanConfig::default(),
            frames: DEFAULT_FRAMES.to_vec(),
            stages: Stages::default(),
            out_dir: out_dir.into(),
            seed: 0,
            query_budget: None,
            export: ExportConfig::default(),
            compose: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        self.extraction.validate()?;
        self.plan.validate()?;
        if self.inputs.is_empty() {
            return Err(Error::Config("no input files".into()));
        }
        if self.frames.iter().any(|&w| w < 2 || !w.is_power_of_two()) {
            return Err(Error::Config("frame sizes must be powers of two".into()));
        }
        if self.query_budget == Some(0) {
            return Err(Error::Config("query budget must be positive".into()));
        }
        Ok(())
    }
}

/// Partition seed for one file: FNV-1a of its name mixed into `seed`, so a
/// file's analysis does not depend on where it sits in the input list.
pub fn file_seed(seed: u64, file_name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in file_name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.rotate_left(32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedBin {
    pub bin: usize,
    pub frequency_hz: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsibilitySummary {
    pub iterations_run: usize,
    pub emd_trace: Vec<Option<f64>>,
    pub cell_size: usize,
    pub complete: bool,
    pub query_count: u64,
    pub nonzero_bins: usize,
    pub top: Vec<RankedBin>,
}

impl ResponsibilitySummary {
    const TOP: usize = 10;

    fn new(map: &ResponsibilityMap, spectrum: &Spectrum) -> Self {
        let top = map
            .ranking()
            .into_iter()
            .take(Self::TOP)
            .filter(|&k| map.scores[k] > 0.0)
            .map(|k| RankedBin {
                bin: k,
                frequency_hz: spectrum.bin_frequency(k),
                score: map.scores[k],
            })
            .collect();
        Self {
            iterations_run: map.iterations_run,
            emd_trace: map.emd_trace.clone(),
            cell_size: map.cell_size,
            complete: map.complete,
            query_count: map.query_count,
            nonzero_bins: map.nonzero().len(),
            top,
        }
    }
}

/// Whether a successful attack survives a wav save/load in each encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportFidelity {
    pub float32: Classification,
    pub float32_flipped: bool,
    pub pcm16: Classification,
    pub pcm16_flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedStage {
    pub stage: String,
    pub file: String,
    pub expected: Classification,
    /// Classification of the written file after loading it back.
    pub reloaded: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub file: String,
    pub source: PathBuf,
    pub config: RunConfig,
    pub partition_seed: u64,
    pub sample_rate: u32,
    pub samples: usize,
    pub responsibility: ResponsibilitySummary,
    pub subsets: SubsetReport,
    pub replay: Replay,
    /// Classification of the spectrum with the sufficient set removed.
    pub inverse: Option<Classification>,
    /// Sufficient-set score minus original score.
    pub score_shift: Option<f64>,
    pub attack: Option<AttackResult>,
    pub attack_export: Option<ExportFidelity>,
    pub stft_attack: Option<AttackResult>,
    pub exports: Vec<ExportedStage>,
    pub query_count: u64,
}

impl FileReport {
    pub fn load(path: impl AsRef<Path>) -> Result<FileReport> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileFailure {
    pub file: String,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct AnalyzeOutcome {
    pub reports: Vec<PathBuf>,
    pub failures: Vec<FileFailure>,
    pub composition: Option<CompositionReport>,
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| file_name(path))
}

/// Everything computed for one signal, before anything is written.
struct Analysis {
    report: FileReport,
    spectrum: Spectrum,
    map: ResponsibilityMap,
    stages: Vec<(&'static str, TimeSignal, Classification)>,
    pcm16_attack: Option<TimeSignal>,
}

fn analyze_signal(
    name: &str,
    source: &Path,
    signal: &TimeSignal,
    handle: &mut ClassifierHandle,
    config: &RunConfig,
) -> Result<Analysis> {
    let start = handle.query_count();
    let mut partition = config.partition;
    partition.seed = file_seed(config.seed, name);
    let spectrum = forward(signal);

    let map = accumulate(handle, &spectrum, &partition)?;
    let subsets = extract(&spectrum, &map, handle, &config.extraction)?;
    let replayed = replay(&spectrum, &subsets, handle, &config.extraction)?;
    let original = subsets.original.clone();

    let mut stages = vec![("original", signal.clone(), original.clone())];
    let reconstruct =
        |set: &Option<BinSet>, at: &Option<Classification>| -> Result<Option<(TimeSignal, Classification)>> {
            match (set, at) {
                (Some(set), Some(at)) => Ok(Some((inverse(&mask(&spectrum, set)?), at.clone()))),
                _ => Ok(None),
            }
        };
    for (stage, set, at) in [
        ("sufficient", &subsets.sufficient, &subsets.at_sufficient),
        ("necessary", &subsets.necessary, &subsets.at_necessary),
        ("complete", &subsets.complete, &subsets.at_complete),
    ] {
        if let Some((s, c)) = reconstruct(set, at)? {
            stages.push((stage, s, c));
        }
    }

    let mut inverse_class = None;
    let mut attack = None;
    let mut attack_export = None;
    let mut stft_result = None;
    let mut pcm16_attack = None;
    if let Some(sufficient) = subsets.sufficient.as_ref().filter(|s| !s.is_empty()) {
        let (left, c) = invert(&spectrum, sufficient, handle)?;
        stages.push(("inverse", left, c.clone()));
        inverse_class = Some(c);

        if config.stages.attack {
            let a = fourier_attack(&spectrum, &map, sufficient, handle, &config.plan)?;
            if let (Some(altered), Some(after)) = (&a.altered, &a.after) {
                let f32_sig = wav_roundtrip(altered, WavEncoding::Float32)?;
                let pcm_sig = wav_roundtrip(altered, WavEncoding::Pcm16)?;
                let float32 = handle.classify(&f32_sig)?;
                let pcm16 = handle.classify(&pcm_sig)?;
                attack_export = Some(ExportFidelity {
                    float32_flipped: float32.label != a.before.label,
                    float32,
                    pcm16_flipped: pcm16.label != a.before.label,
                    pcm16,
                });
                stages.push(("attack", altered.clone(), after.clone()));
                pcm16_attack = Some(pcm_sig);
            }
            if config.stages.stft_attack && (a.success || config.stages.stft_after_failure) {
                let s = stft_attack(signal, &a, handle, &config.frames)?;
                if let (Some(altered), Some(after)) = (&s.altered, &s.after) {
                    stages.push(("stft_attack", altered.clone(), after.clone()));
                }
                stft_result = Some(s);
            }
            attack = Some(a);
        }
    }

    let score_shift = subsets.at_sufficient.as_ref().map(|c| c.score - original.score);
    let report = FileReport {
        file: name.to_string(),
        source: source.to_path_buf(),
        config: config.clone(),
        partition_seed: partition.seed,
        sample_rate: signal.sample_rate(),
        samples: signal.len(),
        responsibility: ResponsibilitySummary::new(&map, &spectrum),
        subsets,
        replay: replayed,
        inverse: inverse_class,
        score_shift,
        attack,
        attack_export,
        stft_attack: stft_result,
        exports: Vec::new(),
        query_count: 0,
    };
    let mut analysis = Analysis {
        report,
        spectrum,
        map,
        stages,
        pcm16_attack,
    };
    analysis.report.query_count = handle.query_count() - start;
    Ok(analysis)
}

fn waveform_csv(stages: &[(&'static str, TimeSignal, Classification)]) -> String {
    let mut out = String::from("sample,time_s");
    for (stage, _, _) in stages {
        let _ = write!(out, ",{stage}");
    }
    out.push('\n');
    let Some((_, first, _)) = stages.first() else {
        return out;
    };
    let sr = f64::from(first.sample_rate());
    for i in 0..first.len() {
        let _ = write!(out, "{i},{}", i as f64 / sr);
        for (_, s, _) in stages {
            let _ = write!(out, ",{}", s.samples()[i]);
        }
        out.push('\n');
    }
    out
}

/// Magnitudes of the attacked STFT bins before and after the STFT attack.
fn spectrogram_csv(signal: &TimeSignal, attack: &AttackResult) -> Result<Option<String>> {
    let (Some(altered), Some(w), Some(bins)) = (&attack.altered, attack.frame_size_used, &attack.stft_bins) else {
        return Ok(None);
    };
    let before = stft(signal, w, w / 2)?;
    let after = stft(altered, w, w / 2)?;
    let mut out = String::from("frame,time_s,bin,frequency_hz,before,after\n");
    let sr = f64::from(signal.sample_rate());
    for (f, (b, a)) in before.frames().iter().zip(after.frames()).enumerate() {
        let t = (f * before.hop()) as f64 / sr;
        for k in bins.iter() {
            let _ = writeln!(
                out,
                "{f},{t},{k},{},{},{}",
                before.bin_frequency(k),
                b[k].norm(),
                a[k].norm()
            );
        }
    }
    Ok(Some(out))
}

fn write_artifacts(
    analysis: &mut Analysis,
    handle: &mut ClassifierHandle,
    config: &RunConfig,
    stem: &str,
) -> Result<()> {
    let out = &config.out_dir;
    if config.export.csv {
        fs::write(
            out.join(format!("{stem}.responsibility.csv")),
            analysis.map.to_csv(&analysis.spectrum),
        )?;
        fs::write(out.join(format!("{stem}.waveform.csv")), waveform_csv(&analysis.stages))?;
        let original = &analysis.stages[0].1;
        if let Some(csv) = analysis
            .report
            .stft_attack
            .as_ref()
            .map(|a| spectrogram_csv(original, a))
            .transpose()?
            .flatten()
        {
            fs::write(out.join(format!("{stem}.stft_attack.csv")), csv)?;
        }
    }
    if config.export.wav {
        let wav_dir = out.join("wav");
        fs::create_dir_all(&wav_dir)?;
        let start = handle.query_count();
        let mut files: Vec<(String, &TimeSignal, WavEncoding, &Classification)> = analysis
            .stages
            .iter()
            .map(|(stage, s, c)| (stage.to_string(), s, WavEncoding::Float32, c))
            .collect();
        if let (Some(pcm), Some(fidelity)) = (&analysis.pcm16_attack, &analysis.report.attack_export) {
            files.push(("attack_pcm16".into(), pcm, WavEncoding::Pcm16, &fidelity.pcm16));
        }
        for (stage, signal, encoding, expected) in files {
            let file = format!("{stem}_{stage}.wav");
            let path = wav_dir.join(&file);
            save_wav(signal, &path, encoding)?;
            let reloaded = handle.classify(&load_wav(&path)?)?;
            analysis.report.exports.push(ExportedStage {
                stage,
                file: format!("wav/{file}"),
                expected: expected.clone(),
                reloaded,
            });
        }
        analysis.report.query_count += handle.query_count() - start;
    }
    Ok(())
}

fn budgeted(handle: ClassifierHandle, budget: Option<u64>) -> ClassifierHandle {
    let used = handle.query_count();
    handle.with_budget(budget.map(|b| used + b))
}

/// Analyzes and writes one file. Errors are per-file failures.
pub fn analyze_file(path: &Path, handle: &mut ClassifierHandle, config: &RunConfig) -> Result<(PathBuf, FileReport)> {
    let name = file_name(path);
    let stem = stem(path);
    let signal = load_wav(path)?;
    let mut analysis = analyze_signal(&name, path, &signal, handle, config)?;
    write_artifacts(&mut analysis, handle, config, &stem)?;
    let out = config.out_dir.join(format!("{stem}{REPORT_SUFFIX}"));
    fs::write(&out, serde_json::to_string_pretty(&analysis.report)? + "\n")?;
    Ok((out, analysis.report))
}

fn connect_workers(config: &RunConfig, jobs: usize) -> Result<Vec<ClassifierHandle>> {
    let first = config.model.connect(&config.bridge)?;
    let mut handles = Vec::with_capacity(jobs);
    for _ in 1..jobs {
        let h = match first.try_clone() {
            Some(h) => h,
            None => config.model.connect(&config.bridge)?,
        };
        handles.push(h);
    }
    handles.insert(0, first);
    Ok(handles)
}

/// Runs the full per-file pipeline over `config.inputs` with `jobs` workers,
/// then the composition experiment if enabled.
///
/// Returns `Err` only for configuration or connection problems; per-file
/// failures are collected in the outcome and in `errors.json`.
pub fn analyze(config: &RunConfig, jobs: usize) -> Result<AnalyzeOutcome> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir)?;
    let jobs = jobs.clamp(1, config.inputs.len());
    let handles = connect_workers(config, jobs)?;

    let next = AtomicUsize::new(0);
    type Slot = Option<(Result<(PathBuf, FileReport)>, f64, u64)>;
    let results: Mutex<Vec<Slot>> = Mutex::new((0..config.inputs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for handle in handles {
            let (next, results) = (&next, &results);
            scope.spawn(move || {
                let mut handle = handle;
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(path) = config.inputs.get(i) else { break };
                    handle = budgeted(handle, config.query_budget);
                    let before = handle.query_count();
                    let t = Instant::now();
                    let r = analyze_file(path, &mut handle, config);
                    let secs = t.elapsed().as_secs_f64();
                    let queries = handle.query_count() - before;
                    match &r {
                        Ok(_) => log::info!("{}: {queries} queries in {secs:.2}s", path.display()),
                        Err(e) => log::error!("{}: {e}", path.display()),
                    }
                    results.lock().expect("results lock")[i] = Some((r, secs, queries));
                }
            });
        }
    });

    let mut outcome = AnalyzeOutcome::default();
    let mut timings = String::from("file,seconds,queries\n");
    let results = results.into_inner().expect("results lock");
    for (path, slot) in config.inputs.iter().zip(results) {
        let (r, secs, queries) = slot.expect("every input is processed");
        let _ = writeln!(timings, "{},{secs:.3},{queries}", file_name(path));
        match r {
            Ok((out, _)) => outcome.reports.push(out),
            Err(e) => outcome.failures.push(FileFailure {
                file: path.display().to_string(),
                error: e.to_string(),
            }),
        }
    }
    fs::write(config.out_dir.join(TIMINGS_FILE), timings)?;
    fs::write(
        config.out_dir.join(ERRORS_FILE),
        serde_json::to_string_pretty(&outcome.failures)? + "\n",
    )?;

    if config.compose && !outcome.reports.is_empty() {
        let mut handle = config.model.connect(&config.bridge)?;
        match compose_reports(&config.out_dir, &mut handle) {
            Ok(c) => outcome.composition = Some(c),
            Err(e) => outcome.failures.push(FileFailure {
                file: COMPOSITION_FILE.into(),
                error: e.to_string(),
            }),
        }
    }
    Ok(outcome)
}

/// Report files in `dir`, sorted by name.
pub fn report_paths(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(REPORT_SUFFIX))
        .collect();
    paths.sort();
    Ok(paths)
}
