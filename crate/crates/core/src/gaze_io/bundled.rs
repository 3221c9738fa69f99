//! Representative models shipped with the toolkit: the population-wide
//! model and one per viewing condition.
//!
//! Priors and transition matrices are stored exactly as published, to four
//! decimals. State order is Red, Green, Black. Emission means exist in print
//! only for the two truth-telling conditions; every other mean and every
//! covariance is a fixture value and the record carries
//! `meta.synthetic_emission = true`.

use std::collections::BTreeMap;

use super::{ModelRecord, StateRecord};

/// Keys of [`load_bundled_models`], in a fixed order.
pub const BUNDLED_KEYS: [&str; 5] = [
    "general",
    "truth_familiar",
    "truth_unfamiliar",
    "lie_familiar",
    "lie_unfamiliar",
];

const ROI_NAMES: [&str; 3] = ["red", "green", "black"];

/// Isotropic fixture covariance, 14² px² per axis.
const FIXTURE_VAR: f64 = 196.0;

struct Table {
    key: &'static str,
    prior: [f64; 3],
    transition: [[f64; 3]; 3],
    means: [[f64; 2]; 3],
    /// Whether the means are fixture values rather than published ones.
    synthetic_means: bool,
}

const TABLES: [Table; 5] = [
    Table {
        key: "general",
        prior: [0.0000, 0.8475, 0.1525],
        transition: [
            [0.9704, 0.0086, 0.0210],
            [0.0449, 0.9248, 0.0303],
            [0.0411, 0.0248, 0.9340],
        ],
        // nose tip, right-eye inner canthus, above the left eye
        means: [[680.0, 445.0], [702.0, 345.0], [640.0, 330.0]],
        synthetic_means: true,
    },
    Table {
        key: "truth_familiar",
        prior: [0.8626, 0.0479, 0.0895],
        transition: [
            [0.8859, 0.0402, 0.0738],
            [0.0285, 0.9444, 0.0272],
            [0.0903, 0.0252, 0.8845],
        ],
        means: [
            [634.9725, 351.6586],
            [676.1114, 493.2836],
            [706.2081, 332.5524],
        ],
        synthetic_means: false,
    },
    Table {
        key: "truth_unfamiliar",
        prior: [0.0820, 0.3354, 0.5826],
        transition: [
            [0.9680, 0.0215, 0.0105],
            [0.0518, 0.9225, 0.0257],
            [0.0420, 0.0898, 0.8682],
        ],
        means: [
            [672.2400, 430.2586],
            [616.2596, 321.0105],
            [688.8656, 337.2602],
        ],
        synthetic_means: false,
    },
    Table {
        key: "lie_familiar",
        prior: [0.6456, 0.0000, 0.3544],
        transition: [
            [0.9102, 0.0500, 0.0398],
            [0.0119, 0.9663, 0.0218],
            [0.0305, 0.0501, 0.9194],
        ],
        // central axis: nose bridge, nose tip, between the eyebrows
        means: [[692.0, 372.0], [683.0, 462.0], [672.0, 298.0]],
        synthetic_means: true,
    },
    Table {
        key: "lie_unfamiliar",
        prior: [0.4848, 0.4027, 0.1125],
        transition: [
            [0.5602, 0.3775, 0.0623],
            [0.3153, 0.5622, 0.1225],
            [0.2099, 0.2751, 0.5150],
        ],
        // left eye, right eye, lower face
        means: [[645.0, 318.0], [724.0, 330.0], [660.0, 520.0]],
        synthetic_means: true,
    },
];

fn to_record(t: &Table) -> ModelRecord {
    let mut m = ModelRecord {
        n_states: 3,
        dim: 2,
        prior: t.prior.to_vec(),
        transition: t.transition.iter().map(|r| r.to_vec()).collect(),
        states: t
            .means
            .iter()
            .map(|mu| StateRecord {
                mean: mu.to_vec(),
                cov: vec![vec![FIXTURE_VAR, 0.0], vec![0.0, FIXTURE_VAR]],
            })
            .collect(),
        label: Some(t.key.to_string()),
        roi_names: Some(ROI_NAMES.iter().map(|s| s.to_string()).collect()),
        meta: None,
    };
    m.set_meta("synthetic_emission", true);
    m.set_meta("synthetic_means", t.synthetic_means);
    m.set_meta("synthetic_covariances", true);
    m
}

/// The five bundled models keyed by `general` or condition name. Entries are
/// the raw four-decimal values; normalization happens when a record is
/// turned into a [`crate::GaussianHmm`].
pub fn load_bundled_models() -> BTreeMap<String, ModelRecord> {
    TABLES
        .iter()
        .map(|t| (t.key.to_string(), to_record(t)))
        .collect()
}
