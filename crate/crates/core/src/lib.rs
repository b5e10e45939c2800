//! Black-box causal analysis of audio classifiers.
//!
//! A signal's one-sided Fourier spectrum is decomposed into frequency subsets
//! that are sufficient, necessary and complete for the classifier's top-1
//! label, and those subsets then drive minimal frequency-domain edits that
//! flip the label.
//!
//! ```text
//! wav -> signal -> responsibility -> subsets -> attacks -> report
//!                        ^             ^          ^
//!                        +---- classifier (builtin | bridge) ----+
//! ```

pub mod attacks;
pub mod classifier;
pub mod corpus;
pub mod error;
pub mod report;
pub mod responsibility;
pub mod signal;
pub mod subsets;

pub use attacks::{fourier_attack, stft_attack, AttackResult, MutationPlan, PlanConfig};
pub use classifier::{Classification, ClassifierHandle, ModelSpec};
pub use error::{Error, Result};
pub use responsibility::{
    accumulate, calculate_responsibility, earth_movers_distance, PartitionConfig, ResponsibilityMap,
};
pub use signal::{BinSet, Spectrogram, Spectrum, TimeSignal};
pub use subsets::{compose, extract, invert, replay, ExtractionConfig, SubsetReport};
