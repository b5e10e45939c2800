//! Runs the full iteration schedule on every clip of the synthetic corpus and
//! reports, for candidate stop thresholds, how many clips would stop early and
//! after how many passes.
//!
//! ```text
//! cargo run --release -p audiocause --example calibrate_epsilon -- [corpus-seed] [eps,eps,...]
//! ```

use audiocause::classifier::builtin_reference_classifier;
use audiocause::corpus::gen_corpus;
use audiocause::report::file_seed;
use audiocause::responsibility::{accumulate, PartitionConfig};
use audiocause::signal::{forward, load_wav};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let candidates: Vec<f64> = match args.next() {
        Some(list) => list.split(',').map(str::parse).collect::<Result<_, _>>()?,
        None => vec![50.0, 100.0, 125.0, 150.0, 200.0, 300.0],
    };

    let dir = tempfile::tempdir()?;
    let manifest = gen_corpus(seed, dir.path())?;
    let base = PartitionConfig::default();
    // Pass i is stopped after when trace[i] < eps.
    let mut traces = Vec::new();
    for clip in &manifest.clips {
        let signal = load_wav(dir.path().join(&clip.file))?;
        let config = PartitionConfig {
            epsilon: f64::MIN_POSITIVE,
            seed: file_seed(seed, &clip.file),
            ..base
        };
        let map = accumulate(&mut builtin_reference_classifier(), &forward(&signal), &config)?;
        let trace: Vec<f64> = map.emd_trace.iter().map(|e| e.unwrap_or(f64::INFINITY)).collect();
        let min = trace.iter().copied().fold(f64::INFINITY, f64::min);
        println!("{}\t{} queries\tmin EMD {min:.2}", clip.file, map.query_count);
        traces.push(trace);
    }

    println!("\nepsilon\tconverged\tmean passes");
    for eps in candidates {
        let passes: Vec<usize> = traces
            .iter()
            .map(|t| t.iter().position(|&e| e < eps).map_or(t.len(), |i| i + 1))
            .collect();
        let converged = traces.iter().filter(|t| t.iter().any(|&e| e < eps)).count();
        let mean = passes.iter().sum::<usize>() as f64 / passes.len() as f64;
        println!("{eps}\t{converged}/{}\t{mean:.1}", traces.len());
    }
    Ok(())
}
