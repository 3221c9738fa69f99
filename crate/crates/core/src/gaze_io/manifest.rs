use std::io::Read;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::Result;

/// Face centre on the default 1366×768 display.
pub const DEFAULT_FACE_CENTER: [f64; 2] = [683.0, 384.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Screen {
    pub width_px: f64,
    pub height_px: f64,
}

impl Default for Screen {
    fn default() -> Self {
        Screen { width_px: 1366.0, height_px: 768.0 }
    }
}

/// Describes the coordinate frame shared by every file of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub screen: Screen,
    #[serde(default = "default_face_center")]
    pub face_center: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials_csv: Option<PathBuf>,
}

fn default_face_center() -> [f64; 2] {
    DEFAULT_FACE_CENTER
}

impl Default for DatasetManifest {
    fn default() -> Self {
        DatasetManifest {
            screen: Screen::default(),
            face_center: DEFAULT_FACE_CENTER,
            trials_csv: None,
        }
    }
}

impl DatasetManifest {
    pub fn read<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }
}
