//! Scanpath modelling toolkit.
//!
//! Turns raw eye-tracker streams into fixation sequences ([`fixation`]),
//! learns per-subject Gaussian-emission hidden Markov models of those
//! sequences ([`hmm`]), reduces populations of models into a few
//! representatives with variational hierarchical EM ([`vhem`]) and assigns
//! unseen scanpaths to viewing conditions ([`classify`]).
//!
//! All on-disk formats live in [`gaze_io`]; [`svg`] renders scanpaths and
//! ROI ellipses. The `scanpath` binary wires the stages together.

pub mod classify;
pub mod cli;
pub mod fixation;
pub mod gaze_io;
pub mod hmm;
mod logspace;
pub mod svg;
pub mod synth;
pub mod vhem;

/// A point in screen coordinates, in pixels.
pub type Point = nalgebra::Vector2<f64>;

/// Version string embedded in every artifact the CLI writes.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub use classify::{Candidate, ClassificationReport, ConfusionMatrix, Rule};
pub use vhem::{HmmMixture, VhemConfig};
pub use fixation::{Fixation, IdtConfig};
pub use gaze_io::{Condition, GazeSample, ModelRecord, Trial};
pub use hmm::{GaussianHmm, ObservationSequence, TrainConfig};
