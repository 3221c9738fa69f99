use std::fmt;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{GazeIoError, Result};

/// Allowed deviation of a probability vector's sum from one. Published
/// tables carry four decimals, so three rounded entries may be off by 3e-4.
pub const STOCHASTIC_TOLERANCE: f64 = 5e-4;

const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Serialized form of a Gaussian-emission HMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub n_states: usize,
    pub dim: usize,
    pub prior: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub states: Vec<StateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Map<String, Value>>,
}

/// Emission parameters of one state: mean in pixels, covariance in pixels².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRecord {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl ModelRecord {
    /// Inserts (or replaces) a metadata entry.
    pub fn set_meta(&mut self, key: &str, value: impl Into<Value>) {
        self.meta
            .get_or_insert_with(Map::new)
            .insert(key.to_string(), value.into());
    }

    pub fn meta_value(&self, key: &str) -> Option<&Value> {
        self.meta.as_ref().and_then(|m| m.get(key))
    }
}

/// One broken invariant of a [`ModelRecord`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: String,
    pub index: Vec<usize>,
    pub observed: String,
    pub bound: String,
}

impl Violation {
    fn new(field: &str, index: &[usize], observed: impl fmt::Display, bound: &str) -> Self {
        Violation {
            field: field.to_string(),
            index: index.to_vec(),
            observed: observed.to_string(),
            bound: bound.to_string(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.field)?;
        for i in &self.index {
            write!(f, "[{i}]")?;
        }
        write!(f, ": observed {}, expected {}", self.observed, self.bound)
    }
}

fn check_stochastic(field: &str, index: &[usize], v: &[f64], out: &mut Vec<Violation>) {
    let mut ok = true;
    for (i, &p) in v.iter().enumerate() {
        let mut idx = index.to_vec();
        idx.push(i);
        if !p.is_finite() || p < 0.0 {
            out.push(Violation::new(field, &idx, p, ">= 0 and finite"));
            ok = false;
        }
    }
    if ok {
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > STOCHASTIC_TOLERANCE {
            out.push(Violation::new(
                &format!("{field} sum"),
                index,
                s,
                &format!("1 ± {STOCHASTIC_TOLERANCE}"),
            ));
        }
    }
}

/// Checks every invariant of a model record. An empty list means valid.
pub fn validate_model(m: &ModelRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    let k = m.n_states;
    if k == 0 {
        out.push(Violation::new("n_states", &[], 0, ">= 1"));
    }
    if m.dim == 0 {
        out.push(Violation::new("dim", &[], 0, ">= 1"));
    }

    if m.prior.len() != k {
        out.push(Violation::new("prior", &[], format!("length {}", m.prior.len()), &format!("length {k}")));
    } else {
        check_stochastic("prior", &[], &m.prior, &mut out);
    }

    if m.transition.len() != k {
        out.push(Violation::new(
            "transition",
            &[],
            format!("{} rows", m.transition.len()),
            &format!("{k} rows"),
        ));
    } else {
        for (i, row) in m.transition.iter().enumerate() {
            if row.len() != k {
                out.push(Violation::new(
                    "transition",
                    &[i],
                    format!("length {}", row.len()),
                    &format!("length {k}"),
                ));
            } else {
                check_stochastic("transition", &[i], row, &mut out);
            }
        }
    }

    if m.states.len() != k {
        out.push(Violation::new(
            "states",
            &[],
            format!("{} states", m.states.len()),
            &format!("{k} states"),
        ));
    }
    let d = m.dim;
    for (s, st) in m.states.iter().enumerate() {
        if st.mean.len() != d {
            out.push(Violation::new(
                "states.mean",
                &[s],
                format!("length {}", st.mean.len()),
                &format!("length {d}"),
            ));
        } else if let Some((i, v)) = st.mean.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            out.push(Violation::new("states.mean", &[s, i], v, "finite"));
        }
        if st.cov.len() != d || st.cov.iter().any(|r| r.len() != d) {
            out.push(Violation::new(
                "states.cov",
                &[s],
                format!("shape {}x{}", st.cov.len(), st.cov.first().map_or(0, |r| r.len())),
                &format!("shape {d}x{d}"),
            ));
            continue;
        }
        if let Some((i, j)) = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .find(|&(i, j)| !st.cov[i][j].is_finite())
        {
            out.push(Violation::new("states.cov", &[s, i, j], st.cov[i][j], "finite"));
            continue;
        }
        let mut symmetric = true;
        for i in 0..d {
            for j in (i + 1)..d {
                let (a, b) = (st.cov[i][j], st.cov[j][i]);
                if (a - b).abs() > SYMMETRY_TOLERANCE * a.abs().max(b.abs()).max(1.0) {
                    out.push(Violation::new(
                        "states.cov",
                        &[s, i, j],
                        format!("{a} vs transpose {b}"),
                        "symmetric",
                    ));
                    symmetric = false;
                }
            }
        }
        if symmetric {
            let mat = DMatrix::from_fn(d, d, |i, j| st.cov[i][j]);
            let min_eig = mat
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if min_eig.is_nan() || min_eig <= 0.0 {
                out.push(Violation::new(
                    "states.cov min eigenvalue",
                    &[s],
                    min_eig,
                    "> 0 (positive definite)",
                ));
            }
        }
    }

    if let Some(names) = &m.roi_names {
        if names.len() != k {
            out.push(Violation::new(
                "roi_names",
                &[],
                format!("length {}", names.len()),
                &format!("length {k}"),
            ));
        }
    }
    out
}

/// Rounds to ten significant digits. Rounding an already rounded value is
/// the identity, which makes serialization a fixed point.
pub fn round_significant(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.9e}").parse().unwrap_or(x)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if n.is_f64() {
                if let Some(r) = n.as_f64().map(round_significant).and_then(serde_json::Number::from_f64) {
                    *n = r;
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

fn rounded_record(m: &ModelRecord) -> ModelRecord {
    let mut m = m.clone();
    m.prior.iter_mut().for_each(|p| *p = round_significant(*p));
    for row in &mut m.transition {
        row.iter_mut().for_each(|p| *p = round_significant(*p));
    }
    for st in &mut m.states {
        st.mean.iter_mut().for_each(|p| *p = round_significant(*p));
        for row in &mut st.cov {
            row.iter_mut().for_each(|p| *p = round_significant(*p));
        }
    }
    if let Some(meta) = &mut m.meta {
        meta.values_mut().for_each(round_value);
    }
    m
}

/// Reads and validates a model record.
pub fn read_model<R: Read>(reader: R) -> Result<ModelRecord> {
    let m: ModelRecord = serde_json::from_reader(reader)?;
    let violations = validate_model(&m);
    if violations.is_empty() {
        Ok(m)
    } else {
        Err(GazeIoError::InvalidModel(violations))
    }
}

/// Writes a model as pretty JSON with numbers rounded to ten significant digits.
pub fn write_model<W: Write>(mut writer: W, m: &ModelRecord) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, &rounded_record(m))?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// A reduced mixture: representative models, mixing weights and the soft
/// assignment of every base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureRecord {
    pub models: Vec<ModelRecord>,
    pub weights: Vec<f64>,
    pub assignments: Vec<Vec<f64>>,
    pub elbo: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Map<String, Value>>,
}

pub fn read_mixture<R: Read>(reader: R) -> Result<MixtureRecord> {
    let m: MixtureRecord = serde_json::from_reader(reader)?;
    let mut violations = Vec::new();
    for (j, model) in m.models.iter().enumerate() {
        for mut v in validate_model(model) {
            v.field = format!("models[{j}].{}", v.field);
            violations.push(v);
        }
    }
    if m.weights.len() != m.models.len() {
        violations.push(Violation::new(
            "weights",
            &[],
            format!("length {}", m.weights.len()),
            &format!("length {}", m.models.len()),
        ));
    }
    if violations.is_empty() {
        Ok(m)
    } else {
        Err(GazeIoError::InvalidModel(violations))
    }
}

pub fn write_mixture<W: Write>(mut writer: W, m: &MixtureRecord) -> Result<()> {
    let mut m = m.clone();
    m.models = m.models.iter().map(rounded_record).collect();
    m.weights.iter_mut().for_each(|w| *w = round_significant(*w));
    for row in &mut m.assignments {
        row.iter_mut().for_each(|w| *w = round_significant(*w));
    }
    m.elbo = round_significant(m.elbo);
    if let Some(meta) = &mut m.meta {
        meta.values_mut().for_each(round_value);
    }
    serde_json::to_writer_pretty(&mut writer, &m)?;
    writer.write_all(b"\n")?;
    Ok(())
}
