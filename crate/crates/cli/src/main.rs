use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use audiocause::attacks::{PlanConfig, DEFAULT_DELTAS, DEFAULT_FRAMES};
use audiocause::classifier::ModelSpec;
use audiocause::corpus::gen_corpus;
use audiocause::report::{analyze, compose_reports, summarize, tables, ExportConfig, FileReport, RunConfig, Stages};
use audiocause::responsibility::PartitionConfig;
use audiocause::subsets::ExtractionConfig;

/// Black-box causal analysis of audio classifiers.
#[derive(Parser)]
#[command(name = "audiocause", version)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic builtin corpus.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Full per-file analysis: responsibility, subsets, attacks, exports.
    Analyze(RunArgs),
    /// Analysis plus the Fourier attack only.
    Attack(RunArgs),
    /// Analysis plus the Fourier and STFT attacks.
    StftAttack(RunArgs),
    /// Superpose same-label sufficient signals from existing reports.
    Compose {
        /// Directory holding `*.report.json` files.
        #[arg(long)]
        reports: PathBuf,
        #[arg(long, default_value = "builtin")]
        model: ModelSpec,
    },
    /// Aggregate reports into summary.json and table CSVs.
    Summarize { report_dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Wav files or directories of wav files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// builtin | cmd:<argv> | tcp:<host:port>
    #[arg(long, default_value = "builtin")]
    model: ModelSpec,
    #[arg(long, default_value_t = PartitionConfig::default().parts)]
    partitions: usize,
    #[arg(long, default_value_t = PartitionConfig::default().max_depth)]
    depth: usize,
    #[arg(long, default_value_t = PartitionConfig::default().iterations)]
    iterations: usize,
    #[arg(long, default_value_t = PartitionConfig::default().epsilon)]
    epsilon: f64,
    #[arg(long, default_value_t = ExtractionConfig::default().chain_length)]
    chain_length: usize,
    #[arg(long, default_value_t = ExtractionConfig::default().min_score_ratio)]
    min_score_ratio: f64,
    /// Maximum number of alterable frequencies.
    #[arg(long, default_value_t = PlanConfig::default().budget)]
    budget: usize,
    /// Amplitude scalars, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_DELTAS)]
    deltas: Vec<f64>,
    /// Phase rotation (radians) applied with each scalar.
    #[arg(long, default_value_t = 0.0)]
    phase: f64,
    /// STFT frame-size schedule, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_FRAMES)]
    frames: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-file classifier query budget.
    #[arg(long)]
    query_budget: Option<u64>,
    /// Export stage reconstructions as wav files.
    #[arg(long)]
    export_wav: bool,
    /// Skip responsibility / waveform / spectrogram CSVs.
    #[arg(long)]
    no_csv: bool,
    /// Skip the same-label composition experiment.
    #[arg(long)]
    no_compose: bool,
    /// Run the STFT attack even where the Fourier attack failed.
    #[arg(long)]
    stft_always: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut wavs: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("reading {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
                .collect();
            wavs.sort();
            files.extend(wavs);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        bail!("no wav files among the inputs");
    }
    Ok(files)
}

impl RunArgs {
    fn config(&self, stages: Stages) -> Result<RunConfig> {
        let mut config = RunConfig::new(expand_inputs(&self.inputs)?, &self.out);
        config.model = self.model.clone();
        config.partition = PartitionConfig {
            parts: self.partitions,
            max_depth: self.depth,
            iterations: self.iterations,
            epsilon: self.epsilon,
            seed: self.seed,
        };
        config.extraction = ExtractionConfig {
            chain_length: self.chain_length,
            min_score_ratio: self.min_score_ratio,
            ..Default::default()
        };
        config.plan = PlanConfig {
            deltas: self.deltas.clone(),
            budget: self.budget,
            phase_radians: self.phase,
        };
        config.frames = self.frames.clone();
        config.stages = Stages {
            stft_after_failure: self.stft_always,
            ..stages
        };
        config.seed = self.seed;
        config.query_budget = self.query_budget;
        config.export = ExportConfig {
            wav: self.export_wav,
            csv: !self.no_csv,
        };
        config.compose = !self.no_compose;
        config.validate()?;
        Ok(config)
    }
}

fn describe(report: &FileReport) -> String {
    let s = &report.subsets;
    let pct = s
        .sufficient_fraction()
        .map_or("-".to_string(), |f| format!("{:.2}%", 100.0 * f));
    let attack = match &report.attack {
        Some(a) if a.success => format!(
            "flip n={} delta={}",
            a.plan.n_frequencies,
            a.plan.chosen_delta.unwrap_or(f64::NAN)
        ),
        Some(_) => "no flip".into(),
        None => "-".into(),
    };
    let stft = match &report.stft_attack {
        Some(a) if a.success => format!(
            "flip w={} frames={}",
            a.frame_size_used.unwrap_or(0),
            a.frames_modified.unwrap_or(0)
        ),
        Some(_) => "no flip".into(),
        None => "-".into(),
    };
    format!(
        "{}\t{} {:.3}\tsufficient {pct}\tnecessary {}\tcomplete {}\treplay {}\tattack {attack}\tstft {stft}\tqueries {}",
        report.file,
        s.original.label,
        s.original.score,
        yes_no(s.necessary.is_some()),
        yes_no(s.complete.is_some()),
        if report.replay.all_pass() { "pass" } else { "FAIL" },
        report.query_count
    )
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn run_batch(args: &RunArgs, stages: Stages) -> Result<ExitCode> {
    let config = args.config(stages)?;
    let outcome = analyze(&config, args.jobs)?;
    for path in &outcome.reports {
        println!("{}", describe(&FileReport::load(path)?));
    }
    if let Some(c) = &outcome.composition {
        for (label, class) in &c.classes {
            println!(
                "composition\t{label}\t{} clips -> {}\t{}",
                class.files.len(),
                class.classification.label,
                if class.success { "kept" } else { "lost" }
            );
        }
    }
    for f in &outcome.failures {
        eprintln!("failed: {}: {}", f.file, f.error);
    }
    println!(
        "{} reports, {} failures in {}",
        outcome.reports.len(),
        outcome.failures.len(),
        config.out_dir.display()
    );
    Ok(if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn print_tables(dir: &Path) -> Result<()> {
    let summary = summarize(dir)?;
    for (name, csv) in tables(&summary) {
        println!("# {name}\n{csv}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenCorpus { out, seed } => {
            let manifest = gen_corpus(seed, &out)?;
            println!(
                "{} clips in {}, builtin accuracy {:.3}",
                manifest.clips.len(),
                out.display(),
                manifest.accuracy
            );
        }
        Command::Analyze(args) => return run_batch(&args, Stages::default()),
        Command::Attack(args) => {
            return run_batch(
                &args,
                Stages {
                    stft_attack: false,
                    ..Stages::default()
                },
            )
        }
        Command::StftAttack(args) => return run_batch(&args, Stages::default()),
        Command::Compose { reports, model } => {
            let mut handle = model.connect(&Default::default())?;
            let c = compose_reports(&reports, &mut handle)?;
            for (label, class) in &c.classes {
                println!(
                    "{label}\t{} clips -> {} {:.3}\t{}",
                    class.files.len(),
                    class.classification.label,
                    class.classification.score,
                    if class.success { "kept" } else { "lost" }
                );
            }
        }
        Command::Summarize { report_dir } => print_tables(&report_dir)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
