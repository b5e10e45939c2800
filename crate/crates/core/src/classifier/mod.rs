//! Black-box classifier access.
//!
//! Every model sits behind a [`ClassifierHandle`], which counts queries and
//! enforces an optional query budget. Algorithms only ever see top-1 labels
//! and scores.

mod bridge;
mod builtin;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{inverse, Spectrum, TimeSignal};

pub use bridge::{
    bridge_classifier, decode_samples, encode_samples, BridgeEndpoint, BridgeModel, BridgeOptions, PROTOCOL_VERSION,
};
pub use builtin::{builtin_reference_classifier, BuiltinClassifier, Features, Weights, BAND_COUNT};

/// Top-1 label and its score, optionally with the full score map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_scores: Option<BTreeMap<String, f64>>,
}

impl Classification {
    pub fn new(label: impl Into<String>, score: f64) -> Result<Self> {
        check_score(score)?;
        Ok(Self {
            label: label.into(),
            score,
            full_scores: None,
        })
    }

    /// Top-1 of a score map. Ties go to the lexicographically smallest label.
    pub fn from_scores(scores: BTreeMap<String, f64>) -> Result<Self> {
        let mut best: Option<(&String, f64)> = None;
        for (label, &score) in &scores {
            check_score(score)?;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((label, score));
            }
        }
        let (label, score) = best.ok_or_else(|| Error::Protocol("empty score map".into()))?;
        Ok(Self {
            label: label.clone(),
            score,
            full_scores: Some(scores.clone()),
        })
    }

    /// Score rounded to two decimal places.
    pub fn score_2dp(&self) -> i64 {
        (self.score * 100.0).round() as i64
    }
}

fn check_score(score: f64) -> Result<()> {
    if !score.is_finite() || !(0.0..=1.0).contains(&score) {
        return Err(Error::Protocol(format!("score {score} is outside [0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Builtin,
    Bridge,
    /// Any other [`Model`] implementation, e.g. a closure in a test.
    Custom,
}

/// Something that maps a signal to a classification.
pub trait Model: Send {
    fn kind(&self) -> ModelKind;

    fn predict(&mut self, signal: &TimeSignal) -> Result<Classification>;

    /// An independent copy for another worker, if the model supports it.
    fn try_clone(&self) -> Option<Box<dyn Model>> {
        None
    }
}

struct FnModel<F>(F);

impl<F> Model for FnModel<F>
where
    F: FnMut(&TimeSignal) -> Result<Classification> + Send + Clone + 'static,
{
    fn kind(&self) -> ModelKind {
        ModelKind::Custom
    }

    fn predict(&mut self, signal: &TimeSignal) -> Result<Classification> {
        (self.0)(signal)
    }

    fn try_clone(&self) -> Option<Box<dyn Model>> {
        Some(Box::new(FnModel(self.0.clone())))
    }
}

/// Query-counting, budget-enforcing wrapper around a [`Model`]. Single consumer:
/// give each worker its own handle.
pub struct ClassifierHandle {
    model: Box<dyn Model>,
    query_count: u64,
    budget: Option<u64>,
}

impl fmt::Debug for ClassifierHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassifierHandle")
            .field("kind", &self.kind())
            .field("query_count", &self.query_count)
            .field("budget", &self.budget)
            .finish()
    }
}

impl ClassifierHandle {
    pub fn new(model: impl Model + 'static) -> Self {
        Self::from_boxed(Box::new(model))
    }

    pub fn from_boxed(model: Box<dyn Model>) -> Self {
        Self {
            model,
            query_count: 0,
            budget: None,
        }
    }

    /// Wraps a closure as a custom model.
    pub fn from_fn<F>(f: F) -> Self
    where
        F: FnMut(&TimeSignal) -> Result<Classification> + Send + Clone + 'static,
    {
        Self::new(FnModel(f))
    }

    pub fn with_budget(mut self, budget: Option<u64>) -> Self {
        self.budget = budget;
        self
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn query_count(&self) -> u64 {
        self.query_count
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|b| b.saturating_sub(self.query_count))
    }

    pub fn classify(&mut self, signal: &TimeSignal) -> Result<Classification> {
        if let Some(budget) = self.budget {
            if self.query_count >= budget {
                return Err(Error::BudgetExhausted { budget });
            }
        }
        self.query_count += 1;
        self.model.predict(signal)
    }

    /// Classifies the time-domain reconstruction of `spectrum`.
    pub fn classify_spectrum(&mut self, spectrum: &Spectrum) -> Result<Classification> {
        self.classify(&inverse(spectrum))
    }

    /// A fresh handle (zero queries, same budget) over a copy of the model.
    pub fn try_clone(&self) -> Option<ClassifierHandle> {
        self.model.try_clone().map(|model| ClassifierHandle {
            model,
            query_count: 0,
            budget: self.budget,
        })
    }
}

/// Where a classifier comes from, as given on the command line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "target", rename_all = "lowercase")]
pub enum ModelSpec {
    Builtin,
    /// `cmd:<argv>`, whitespace separated.
    Cmd(Vec<String>),
    /// `tcp:<host:port>`.
    Tcp(String),
}

impl ModelSpec {
    pub fn connect(&self, options: &BridgeOptions) -> Result<ClassifierHandle> {
        match self {
            ModelSpec::Builtin => Ok(builtin_reference_classifier()),
            ModelSpec::Cmd(argv) => bridge_classifier(&BridgeEndpoint::Command(argv.clone()), options),
            ModelSpec::Tcp(addr) => bridge_classifier(&BridgeEndpoint::Tcp(addr.clone()), options),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "builtin" {
            return Ok(ModelSpec::Builtin);
        }
        if let Some(rest) = s.strip_prefix("cmd:") {
            let argv: Vec<String> = rest.split_whitespace().map(String::from).collect();
            if argv.is_empty() {
                return Err(Error::Config("cmd: needs a command line".into()));
            }
            return Ok(ModelSpec::Cmd(argv));
        }
        if let Some(addr) = s.strip_prefix("tcp:") {
            if addr.is_empty() {
                return Err(Error::Config("tcp: needs an address".into()));
            }
            return Ok(ModelSpec::Tcp(addr.to_string()));
        }
        Err(Error::Config(format!(
            "unknown model '{s}', expected builtin, cmd:<argv> or tcp:<addr>"
        )))
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Builtin => write!(f, "builtin"),
            ModelSpec::Cmd(argv) => write!(f, "cmd:{}", argv.join(" ")),
            ModelSpec::Tcp(addr) => write!(f, "tcp:{addr}"),
        }
    }
}
