//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

#[path = "../common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use audiocause::attacks::perturbation_strength;
use audiocause::classifier::builtin_reference_classifier;
use audiocause::corpus::{gen_corpus, CorpusManifest};
use audiocause::report::{analyze, report_paths, AnalyzeOutcome, FileReport, RunConfig};
use audiocause::responsibility::{accumulate, earth_movers_distance, PartitionConfig};
use audiocause::signal::{forward, inverse, istft, load_wav, mask, stft};
use audiocause::subsets::{extract, ExtractionConfig, StepSize};
use audiocause::{BinSet, Classification, ClassifierHandle, Spectrum, TimeSignal};
use common::{brute_force, transport_cost, ToyInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::num_complex::Complex64;

const CORPUS_SEED: u64 = 0;
/// Clips flipped by changing a single frequency, measured with `CORPUS_SEED`.
const PINNED_SINGLE_BIN_FLIPS: usize = 29;
/// Classes whose composed sufficient signals keep the label, same seed.
const PINNED_COMPOSED_CLASSES: usize = 4;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn report(name: &str, limit: Option<Duration>, run: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = run();
    let took = start.elapsed();
    let in_time = limit.is_none_or(|l| took <= l);
    let pass = v.pass && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" (limit {}s)", l.as_secs()));
    let late = if in_time { "" } else { "; too slow" };
    println!(
        "{} {name}: {}{late} [{:.1}s{budget}]",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        took.as_secs_f64()
    );
    pass
}

// ---------------------------------------------------------------- transforms

fn fixture_signals() -> Vec<TimeSignal> {
    let sr = 8000;
    let mut out = vec![
        TimeSignal::silence(1024, sr).unwrap(),
        TimeSignal::new(vec![0.7], sr).unwrap(),
        TimeSignal::new(vec![0.3, -0.9], sr).unwrap(),
        TimeSignal::new(vec![0.1, 0.5, -0.2], sr).unwrap(),
    ];
    let mut impulse = vec![0.0f32; 1001];
    impulse[500] = 1.0;
    out.push(TimeSignal::new(impulse, sr).unwrap());
    out.push(TimeSignal::new(vec![0.25; 4096], sr).unwrap());
    out.push(TimeSignal::new((0..4096).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect(), sr).unwrap());
    for (freq, n) in [(440.0, 8000), (1000.0, 7919), (3999.0, 4096)] {
        let s: Vec<f64> = (0..n)
            .map(|i| 0.8 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect();
        out.push(TimeSignal::from_f64(&s, sr).unwrap());
    }
    let chirp: Vec<f64> = (0..16000)
        .map(|i| {
            let t = i as f64 / sr as f64;
            0.5 * (2.0 * std::f64::consts::PI * (100.0 * t + 900.0 * t * t)).sin()
        })
        .collect();
    out.push(TimeSignal::from_f64(&chirp, sr).unwrap());
    out
}

fn random_signal(rng: &mut ChaCha8Rng, len: usize) -> TimeSignal {
    let amp = rng.gen_range(0.01..1.0f32);
    let sr = [8000, 16000, 22050, 44100][rng.gen_range(0..4)];
    TimeSignal::new((0..len).map(|_| rng.gen_range(-amp..=amp)).collect(), sr).unwrap()
}

/// Parseval from first principles: `Σ|x|² = (1/n) Σ_full |X_k|²`, with the
/// one-sided half-spectrum mirrored explicitly.
fn parseval_gap(signal: &TimeSignal, spectrum: &Spectrum) -> f64 {
    let n = signal.len();
    let time: f64 = signal.samples().iter().map(|&x| f64::from(x).powi(2)).sum();
    let bins = spectrum.bins();
    let mut freq = 0.0;
    for k in 0..n {
        let mirrored = if k < bins.len() { bins[k] } else { bins[n - k].conj() };
        freq += mirrored.norm_sqr();
    }
    freq /= n as f64;
    if time == 0.0 {
        freq
    } else {
        (time - freq).abs() / time
    }
}

fn transform_fidelity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut signals = fixture_signals();
    for _ in 0..120 {
        let len = rng.gen_range(1..6000);
        signals.push(random_signal(&mut rng, len));
    }
    let (mut worst_rt, mut worst_parseval) = (0.0f64, 0.0f64);
    for s in &signals {
        let spec = forward(s);
        let back = inverse(&spec);
        let err = s
            .samples()
            .iter()
            .zip(back.samples())
            .map(|(a, b)| f64::from((a - b).abs()))
            .fold(0.0, f64::max);
        worst_rt = worst_rt.max(if back.len() == s.len() { err } else { f64::INFINITY });
        worst_parseval = worst_parseval.max(parseval_gap(s, &spec));
    }
    let mut worst_stft = 0.0f64;
    let mut stft_cases = 0;
    for _ in 0..12 {
        let len = rng.gen_range(2048..12000);
        let s = random_signal(&mut rng, len);
        for w in [256, 512, 1024] {
            let back = istft(&stft(&s, w, w / 2).unwrap());
            let err = s
                .samples()
                .iter()
                .zip(back.samples())
                .map(|(a, b)| f64::from((a - b).abs()))
                .fold(0.0, f64::max);
            worst_stft = worst_stft.max(if back.len() == s.len() { err } else { f64::INFINITY });
            stft_cases += 1;
        }
    }
    verdict(
        signals.len() >= 100 && worst_rt < 1e-6 && worst_parseval < 1e-6 && worst_stft < 1e-4,
        format!(
            "{} signals: round trip {worst_rt:.2e}, Parseval {worst_parseval:.2e}; {stft_cases} STFT cases {worst_stft:.2e}",
            signals.len()
        ),
    )
}

// ---------------------------------------------------------------- corpus runs

struct Corpus {
    dir: PathBuf,
    manifest: CorpusManifest,
}

fn run_config(corpus: &Corpus, out: &Path) -> RunConfig {
    let mut config = RunConfig::new(corpus.manifest.paths(&corpus.dir), out);
    config.seed = CORPUS_SEED;
    config.export.csv = false;
    config.export.wav = false;
    config
}

fn keeps(
    spectrum: &Spectrum,
    set: &BinSet,
    original: &Classification,
    h: &mut ClassifierHandle,
) -> (bool, Classification) {
    let at = h.classify(&inverse(&mask(spectrum, set).unwrap())).unwrap();
    (at.label == original.label && at.score >= 0.5 * original.score, at)
}

fn flips(spectrum: &Spectrum, set: &BinSet, original: &Classification, h: &mut ClassifierHandle) -> bool {
    let rest = set.complement(spectrum.len());
    h.classify(&inverse(&mask(spectrum, &rest).unwrap())).unwrap().label != original.label
}

fn two_dp(score: f64) -> i64 {
    (score * 100.0).round() as i64
}

/// Re-checks one report's sets with a fresh classifier.
fn replay_report(report: &FileReport, path: &Path) -> Result<(), String> {
    let signal = load_wav(path).map_err(|e| e.to_string())?;
    let spectrum = forward(&signal);
    let mut h = builtin_reference_classifier();
    let original = h.classify(&signal).unwrap();
    let s = &report.subsets;
    if original != s.original {
        return Err("original classification differs".into());
    }
    if let Some(set) = &s.sufficient {
        if !keeps(&spectrum, set, &original, &mut h).0 {
            return Err("sufficient set fails".into());
        }
    }
    if let Some(set) = &s.necessary {
        if !keeps(&spectrum, set, &original, &mut h).0 || !flips(&spectrum, set, &original, &mut h) {
            return Err("necessary set fails".into());
        }
    }
    if let Some(set) = &s.complete {
        let (ok, at) = keeps(&spectrum, set, &original, &mut h);
        if !ok || !flips(&spectrum, set, &original, &mut h) || two_dp(at.score) != two_dp(original.score) {
            return Err("complete set fails".into());
        }
    }
    Ok(())
}

fn definition_replay(corpus: &Corpus, out: &Path) -> (Verdict, Option<AnalyzeOutcome>) {
    let outcome = match analyze(&run_config(corpus, out), 1) {
        Ok(o) => o,
        Err(e) => return (verdict(false, format!("analyze failed: {e}")), None),
    };
    let mut checked = [0usize; 3];
    let mut problems = Vec::new();
    for f in &outcome.failures {
        problems.push(format!("{}: {}", f.file, f.error));
    }
    for path in &outcome.reports {
        let report = FileReport::load(path).unwrap();
        let s = &report.subsets;
        for (i, set) in [&s.sufficient, &s.necessary, &s.complete].into_iter().enumerate() {
            checked[i] += usize::from(set.is_some());
        }
        if let Err(e) = replay_report(&report, &corpus.dir.join(&report.file)) {
            problems.push(format!("{}: {e}", report.file));
        }
    }
    let n = outcome.reports.len();
    let v = verdict(
        problems.is_empty() && n >= 100,
        format!(
            "{n} clips, {} sufficient / {} necessary / {} complete sets re-verified, {} problems{}",
            checked[0],
            checked[1],
            checked[2],
            problems.len(),
            problems.first().map_or(String::new(), |p| format!(" (first: {p})"))
        ),
    );
    (v, Some(outcome))
}

/// Re-derives each successful attack from its plan.
fn attack_soundness(corpus: &Corpus, reports: &[FileReport]) -> Verdict {
    let mut h = builtin_reference_classifier();
    let (mut successes, mut single, mut problems) = (0, 0, Vec::<String>::new());
    for r in reports {
        let Some(a) = r.attack.as_ref().filter(|a| a.success) else {
            continue;
        };
        successes += 1;
        let plan = &a.plan;
        single += usize::from(plan.n_frequencies == 1);
        let signal = load_wav(corpus.dir.join(&r.file)).unwrap();
        let spectrum = forward(&signal);
        let sufficient = r.subsets.sufficient.clone().unwrap_or_default();
        let mut fail = |why: &str| problems.push(format!("{}: {why}", r.file));

        if plan.bins_modified.len() != plan.n_frequencies || plan.n_frequencies > plan.budget || plan.budget > 1000 {
            fail("budget");
        }
        if !plan.bins_modified.is_subset(&sufficient) {
            fail("bins outside the sufficient set");
        }
        let Some(delta) = plan.chosen_delta else {
            fail("no delta");
            continue;
        };
        let apply = |d: f64| -> Spectrum {
            let factor = Complex64::from_polar(d, plan.phase_radians);
            let bins: Vec<Complex64> = spectrum
                .bins()
                .iter()
                .enumerate()
                .map(|(k, &c)| if plan.bins_modified.contains(k) { c * factor } else { c })
                .collect();
            Spectrum::from_bins(bins, spectrum.original_length(), spectrum.sample_rate()).unwrap()
        };
        let altered = apply(delta);
        let untouched_identical = altered
            .bins()
            .iter()
            .zip(spectrum.bins())
            .enumerate()
            .filter(|(k, _)| !plan.bins_modified.contains(*k))
            .all(|(_, (x, y))| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits());
        if !untouched_identical {
            fail("unreported bins changed");
        }
        let engine = spectrum
            .multiplied(&plan.bins_modified, Complex64::from_polar(delta, plan.phase_radians))
            .unwrap();
        if engine.bins().iter().zip(altered.bins()).any(|(x, y)| x != y) {
            fail("engine mutation differs from the plan");
        }
        let after = h.classify(&inverse(&altered)).unwrap();
        if after.label == a.before.label || Some(&after) != a.after.as_ref() {
            fail("replayed mutation does not reproduce the flip");
        }
        let weaker = plan.deltas.iter().filter(|&&d| {
            perturbation_strength(d) < perturbation_strength(delta)
                || (perturbation_strength(d) == perturbation_strength(delta) && d < delta)
        });
        for &d in weaker {
            if h.classify(&inverse(&apply(d))).unwrap().label != a.before.label {
                fail(&format!("weaker delta {d} also flips"));
            }
        }
    }
    let attempted = reports.iter().filter(|r| r.attack.is_some()).count();
    verdict(
        problems.is_empty() && single >= 1 && single == PINNED_SINGLE_BIN_FLIPS,
        format!(
            "{successes}/{attempted} flips re-derived, {single} single-bin (pinned {PINNED_SINGLE_BIN_FLIPS}), {} problems{}",
            problems.len(),
            problems.first().map_or(String::new(), |p| format!(" (first: {p})"))
        ),
    )
}

fn determinism(corpus: &Corpus, first: &Path, second: &Path) -> Verdict {
    let snapshot = |dir: &Path| -> Vec<(PathBuf, Vec<u8>)> {
        report_paths(dir)
            .unwrap()
            .into_iter()
            .map(|p| (p.file_name().unwrap().into(), fs::read(&p).unwrap()))
            .collect()
    };
    let before = snapshot(first);
    // One run into a fresh directory, one over the first run's output.
    if let Err(e) = analyze(&run_config(corpus, second), 1) {
        return verdict(false, format!("second run failed: {e}"));
    }
    let fresh = snapshot(second);
    analyze(&run_config(corpus, first), 1).unwrap();
    let rerun = snapshot(first);
    let differing = before
        .iter()
        .zip(&fresh)
        .zip(&rerun)
        .filter(|((a, b), c)| a != b || a != c)
        .count();
    let same_len = before.len() == fresh.len() && before.len() == rerun.len();
    verdict(
        same_len && differing == 0 && !before.is_empty(),
        format!("{} reports over three runs, {differing} differ", before.len()),
    )
}

fn composition(outcome: &AnalyzeOutcome) -> Verdict {
    let Some(c) = &outcome.composition else {
        return verdict(false, "no composition report");
    };
    let kept: Vec<&String> = c.classes.iter().filter(|(_, v)| v.success).map(|(k, _)| k).collect();
    verdict(
        !kept.is_empty() && kept.len() == PINNED_COMPOSED_CLASSES,
        format!(
            "{}/{} classes keep their label (pinned {PINNED_COMPOSED_CLASSES}): {kept:?}",
            kept.len(),
            c.classes.len()
        ),
    )
}

// ---------------------------------------------------------------- oracles

fn oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cases = 60;
    let (mut set_matches, mut ranking_ok) = (0, 0);
    for case in 0..cases {
        let bins = rng.gen_range(4..=12);
        let toy = ToyInstance::random(&mut rng, bins);
        let oracle = brute_force(bins, |s| toy.passes(s));
        let config = PartitionConfig {
            parts: 2 + case % 2,
            max_depth: 8,
            iterations: 10,
            epsilon: 1e-9,
            seed: case as u64,
        };
        let map = accumulate(&mut toy.handle(), &toy.spectrum, &config).unwrap();
        let lowest_positive = (0..bins)
            .filter(|&b| oracle.responsibility[b] > 0.0)
            .map(|b| map.scores[b])
            .fold(f64::INFINITY, f64::min);
        let highest_zero = (0..bins)
            .filter(|&b| oracle.responsibility[b] == 0.0)
            .map(|b| map.scores[b])
            .fold(f64::NEG_INFINITY, f64::max);
        ranking_ok += usize::from(highest_zero < lowest_positive);
        let extraction = ExtractionConfig {
            step: StepSize::Bins(1),
            ..Default::default()
        };
        let subsets = extract(&toy.spectrum, &map, &mut toy.handle(), &extraction).unwrap();
        set_matches += usize::from(
            subsets
                .sufficient
                .is_some_and(|s| oracle.minimal_sufficient.contains(&s)),
        );
    }
    verdict(
        10 * set_matches >= 9 * cases && ranking_ok == cases,
        format!("{cases} toys: sufficient set matches oracle in {set_matches}, ranking separates in {ranking_ok}"),
    )
}

fn emd_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut hist = |n: usize| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.2) {
                        0.0
                    } else {
                        rng.gen_range(0.0..1.0)
                    }
                })
                .collect();
            if v.iter().sum::<f64>() > 1e-6 {
                return v;
            }
        }
    };
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (a, b) = (hist(16), hist(16));
        worst = worst.max((earth_movers_distance(&a, &b).unwrap() - transport_cost(&a, &b)).abs());
    }
    let mut violations = 0;
    for _ in 0..1000 {
        let (a, b, c) = (hist(16), hist(16), hist(16));
        let d = |x: &[f64], y: &[f64]| earth_movers_distance(x, y).unwrap();
        let ok = d(&a, &b) >= 0.0
            && d(&a, &a) == 0.0
            && (d(&a, &b) - d(&b, &a)).abs() < 1e-12
            && d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12;
        violations += usize::from(!ok);
    }
    verdict(
        worst < 1e-9 && violations == 0,
        format!("200 pairs max |closed form - LP| {worst:.1e}; 1000 triples, {violations} metric violations"),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    all &= report("transform fidelity", Some(Duration::from_secs(10)), transform_fidelity);
    all &= report("oracle equivalence", Some(Duration::from_secs(60)), oracle_equivalence);
    all &= report("EMD correctness", None, emd_correctness);

    let work = tempfile::tempdir().unwrap();
    let corpus_dir = work.path().join("corpus");
    let manifest = gen_corpus(CORPUS_SEED, &corpus_dir).expect("corpus generation");
    let corpus = Corpus {
        dir: corpus_dir,
        manifest,
    };
    let first = work.path().join("run1");
    let mut outcome = None;
    all &= report("definition replay", Some(Duration::from_secs(600)), || {
        let (v, o) = definition_replay(&corpus, &first);
        outcome = o;
        v
    });
    let reports: Vec<FileReport> = outcome
        .as_ref()
        .map(|o| o.reports.iter().map(|p| FileReport::load(p).unwrap()).collect())
        .unwrap_or_default();
    all &= report("attack soundness", None, || attack_soundness(&corpus, &reports));
    all &= report("composition", None, || match &outcome {
        Some(o) => composition(o),
        None => verdict(false, "no corpus run"),
    });
    all &= report("determinism", None, || {
        determinism(&corpus, &first, &work.path().join("run2"))
    });

    if all {
        println!("all acceptance criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance criteria failed");
        ExitCode::FAILURE
    }
}
