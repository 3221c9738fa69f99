//! On-disk formats: gaze CSV, fixation CSV, model JSON, mixture JSON and the
//! dataset manifest, plus the bundled representative models.

mod bundled;
mod csv_io;
mod manifest;
mod model;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bundled::{load_bundled_models, BUNDLED_KEYS};
pub use csv_io::{
    parse_fixation_csv, parse_gaze_csv, write_fixation_csv, FixationTrial, FIXATION_CSV_HEADER,
    GAZE_CSV_HEADER,
};
pub use manifest::{DatasetManifest, Screen, DEFAULT_FACE_CENTER};
pub use model::{
    read_mixture, read_model, round_significant, validate_model, write_mixture, write_model,
    MixtureRecord, ModelRecord, StateRecord, Violation, STOCHASTIC_TOLERANCE,
};

/// One timestamped gaze sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    /// Milliseconds since trial start.
    pub t_ms: f64,
    pub x_px: f64,
    pub y_px: f64,
}

/// Viewing condition of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    TruthFamiliar,
    TruthUnfamiliar,
    LieFamiliar,
    LieUnfamiliar,
    Unknown,
}

impl Condition {
    pub const KNOWN: [Condition; 4] = [
        Condition::TruthFamiliar,
        Condition::TruthUnfamiliar,
        Condition::LieFamiliar,
        Condition::LieUnfamiliar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::TruthFamiliar => "truth_familiar",
            Condition::TruthUnfamiliar => "truth_unfamiliar",
            Condition::LieFamiliar => "lie_familiar",
            Condition::LieUnfamiliar => "lie_unfamiliar",
            Condition::Unknown => "unknown",
        }
    }

    /// Lenient parse: anything unrecognized becomes [`Condition::Unknown`].
    pub fn parse_lenient(s: &str) -> Condition {
        s.parse().unwrap_or(Condition::Unknown)
    }
}

impl FromStr for Condition {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "truth_familiar" => Ok(Condition::TruthFamiliar),
            "truth_unfamiliar" => Ok(Condition::TruthUnfamiliar),
            "lie_familiar" => Ok(Condition::LieFamiliar),
            "lie_unfamiliar" => Ok(Condition::LieUnfamiliar),
            "unknown" => Ok(Condition::Unknown),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Samples recorded while one stimulus was on screen.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub participant_id: String,
    pub trial_id: String,
    pub condition: Condition,
    pub samples: Vec<GazeSample>,
}

#[derive(Debug, Error)]
pub enum GazeIoError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("trial {participant_id}/{trial_id}: {message}")]
    Validation {
        participant_id: String,
        trial_id: String,
        message: String,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid model: {}", join_violations(.0))]
    InvalidModel(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, GazeIoError>;
