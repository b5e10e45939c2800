use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{report_paths, FileReport};
use crate::classifier::{Classification, ClassifierHandle};
use crate::error::{Error, Result};
use crate::signal::load_wav;
use crate::subsets::{compose, padded_subset_spectrum};

pub const COMPOSITION_FILE: &str = "composition.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassComposition {
    pub files: Vec<String>,
    pub classification: Classification,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    /// Keyed by the original label the sufficient sets were extracted for.
    pub classes: BTreeMap<String, ClassComposition>,
}

/// Superposes every report's sufficient reconstruction per original label
/// and classifies the sum. Shorter clips are zero-padded to the longest.
/// Writes `composition.json` into `report_dir`.
pub fn compose_reports(report_dir: impl AsRef<Path>, handle: &mut ClassifierHandle) -> Result<CompositionReport> {
    let report_dir = report_dir.as_ref();
    let mut groups: BTreeMap<String, Vec<FileReport>> = BTreeMap::new();
    for path in report_paths(report_dir)? {
        let report = FileReport::load(&path)?;
        if report.subsets.sufficient.as_ref().is_some_and(|s| !s.is_empty()) {
            groups
                .entry(report.subsets.original.label.clone())
                .or_default()
                .push(report);
        }
    }
    if groups.is_empty() {
        return Err(Error::Config(format!(
            "no reports with sufficient sets in {}",
            report_dir.display()
        )));
    }

    let mut classes = BTreeMap::new();
    for (label, reports) in groups {
        let len = reports.iter().map(|r| r.samples).max().unwrap_or_default();
        let mut spectra = Vec::with_capacity(reports.len());
        for r in &reports {
            let signal = load_wav(&r.source)?;
            let set = r.subsets.sufficient.as_ref().expect("filtered above");
            spectra.push(padded_subset_spectrum(&signal, set, len)?);
        }
        let c = compose(&spectra, handle, &label)?;
        log::info!(
            "composition of {} '{label}' clips -> {}",
            reports.len(),
            c.classification.label
        );
        classes.insert(
            label,
            ClassComposition {
                files: reports.iter().map(|r| r.file.clone()).collect(),
                classification: c.classification,
                success: c.success,
            },
        );
    }
    let report = CompositionReport { classes };
    fs::write(
        report_dir.join(COMPOSITION_FILE),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(report)
}
