//! Gaussian-emission hidden Markov models over 2D fixation locations.
//!
//! All recursions run in log space. Exact zeros in the initial vector or the
//! transition matrix are kept and become `-inf`; they are never floored here.

mod inference;
mod sample;
mod train;

use std::f64::consts::PI;
use std::ops::Deref;

use nalgebra::Matrix2;
use thiserror::Error;

use crate::gaze_io::{ModelRecord, StateRecord, STOCHASTIC_TOLERANCE};
use crate::logspace::ln0;
use crate::Point;

pub use inference::Posteriors;
pub use sample::SampledSequence;
pub use train::{fit_map, map_objective, FitOutcome, TrainConfig};
pub(crate) use train::floor_covariance;

/// Smallest covariance eigenvalue a model may carry, in px².
pub const MIN_COV_EIGENVALUE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HmmError {
    #[error("covariance is singular or not positive definite (min eigenvalue {0})")]
    SingularCovariance(f64),
    #[error("covariance is not symmetric")]
    AsymmetricCovariance,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid probabilities: {0}")]
    Probability(String),
    #[error("observation sequence is empty")]
    EmptySequence,
    #[error("observation {0} is not finite")]
    NonFinite(usize),
    #[error("no admissible path")]
    NoAdmissiblePath,
    #[error("invalid training input: {0}")]
    Training(String),
}

pub type Result<T> = std::result::Result<T, HmmError>;

/// A 2D Gaussian with its inverse and normalizing constant cached.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian2 {
    mean: Point,
    cov: Matrix2<f64>,
    inv: Matrix2<f64>,
    chol: Matrix2<f64>,
    log_det: f64,
}

/// Eigenvalues of a symmetric 2×2 matrix, ascending.
pub(crate) fn sym_eigenvalues(m: &Matrix2<f64>) -> (f64, f64) {
    let half_trace = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let half_diff = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    let r = (half_diff * half_diff + m[(0, 1)] * m[(1, 0)]).sqrt();
    (half_trace - r, half_trace + r)
}

impl Gaussian2 {
    pub fn new(mean: Point, cov: Matrix2<f64>) -> Result<Self> {
        if (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-9 * cov.abs().max().max(1.0) {
            return Err(HmmError::AsymmetricCovariance);
        }
        let cov = 0.5 * (cov + cov.transpose());
        let (lo, _) = sym_eigenvalues(&cov);
        if !(lo > 0.0) || !cov.iter().all(|v| v.is_finite()) {
            return Err(HmmError::SingularCovariance(lo));
        }
        let chol = cov.cholesky().ok_or(HmmError::SingularCovariance(lo))?;
        let l = chol.l();
        let log_det = 2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln());
        Ok(Gaussian2 { mean, inv: chol.inverse(), chol: l, cov, log_det })
    }

    pub fn mean(&self) -> &Point {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix2<f64> {
        &self.cov
    }

    pub(crate) fn inv(&self) -> &Matrix2<f64> {
        &self.inv
    }

    pub(crate) fn chol(&self) -> &Matrix2<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn log_pdf(&self, y: &Point) -> f64 {
        let d = y - self.mean;
        -(2.0 * PI).ln() - 0.5 * self.log_det - 0.5 * d.dot(&(self.inv * d))
    }
}

/// Log-density of a 2D Gaussian at `point`.
pub fn gaussian_logpdf(point: &Point, mean: &Point, cov: &Matrix2<f64>) -> Result<f64> {
    Ok(Gaussian2::new(*mean, *cov)?.log_pdf(point))
}

/// A non-empty sequence of finite 2D observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSequence(Vec<Point>);

impl ObservationSequence {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        check_sequence(&points)?;
        Ok(ObservationSequence(points))
    }

    pub fn into_inner(self) -> Vec<Point> {
        self.0
    }
}

impl Deref for ObservationSequence {
    type Target = [Point];

    fn deref(&self) -> &[Point] {
        &self.0
    }
}

impl AsRef<[Point]> for ObservationSequence {
    fn as_ref(&self) -> &[Point] {
        &self.0
    }
}

pub(crate) fn check_sequence(seq: &[Point]) -> Result<()> {
    if seq.is_empty() {
        return Err(HmmError::EmptySequence);
    }
    if let Some(i) = seq.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(HmmError::NonFinite(i));
    }
    Ok(())
}

fn normalized(v: &[f64], what: &str) -> Result<Vec<f64>> {
    if let Some(p) = v.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(HmmError::Probability(format!("{what} has entry {p}")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOLERANCE {
        return Err(HmmError::Probability(format!("{what} sums to {s}")));
    }
    Ok(v.iter().map(|p| p / s).collect())
}

/// A K-state HMM with one 2D Gaussian per state.
///
/// Construction validates and renormalizes `prior` and every transition row
/// so they sum to one exactly (up to rounding).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHmm {
    prior: Vec<f64>,
    /// Row-major K×K.
    transition: Vec<f64>,
    emissions: Vec<Gaussian2>,
    log_prior: Vec<f64>,
    log_transition: Vec<f64>,
}

impl GaussianHmm {
    pub fn new(prior: Vec<f64>, transition: Vec<Vec<f64>>, emissions: Vec<Gaussian2>) -> Result<Self> {
        let k = prior.len();
        if k == 0 {
            return Err(HmmError::Dimension("at least one state required".into()));
        }
        if transition.len() != k || transition.iter().any(|r| r.len() != k) {
            return Err(HmmError::Dimension(format!("transition must be {k}x{k}")));
        }
        if emissions.len() != k {
            return Err(HmmError::Dimension(format!("{} emissions for {k} states", emissions.len())));
        }
        for e in &emissions {
            let (lo, _) = sym_eigenvalues(e.cov());
            // rounding slack so a freshly floored covariance is accepted
            if lo < MIN_COV_EIGENVALUE * (1.0 - 1e-9) {
                return Err(HmmError::SingularCovariance(lo));
            }
        }
        let prior = normalized(&prior, "prior")?;
        let mut flat = Vec::with_capacity(k * k);
        for (i, row) in transition.iter().enumerate() {
            flat.extend(normalized(row, &format!("transition row {i}"))?);
        }
        Ok(GaussianHmm {
            log_prior: prior.iter().map(|&p| ln0(p)).collect(),
            log_transition: flat.iter().map(|&p| ln0(p)).collect(),
            prior,
            transition: flat,
            emissions,
        })
    }

    /// Builds a model from a record; only `dim == 2` is supported.
    pub fn from_record(m: &ModelRecord) -> Result<Self> {
        if m.dim != 2 {
            return Err(HmmError::Dimension(format!("dim {} (only 2 supported)", m.dim)));
        }
        if m.prior.len() != m.n_states || m.states.len() != m.n_states {
            return Err(HmmError::Dimension(format!(
                "n_states {} but prior has {} and states {} entries",
                m.n_states,
                m.prior.len(),
                m.states.len()
            )));
        }
        let emissions = m
            .states
            .iter()
            .map(|s| {
                if s.mean.len() != 2 || s.cov.len() != 2 || s.cov.iter().any(|r| r.len() != 2) {
                    return Err(HmmError::Dimension("state mean/cov must be 2D".into()));
                }
                Gaussian2::new(
                    Point::new(s.mean[0], s.mean[1]),
                    Matrix2::new(s.cov[0][0], s.cov[0][1], s.cov[1][0], s.cov[1][1]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        GaussianHmm::new(m.prior.clone(), m.transition.clone(), emissions)
    }

    pub fn to_record(&self, label: Option<&str>) -> ModelRecord {
        let k = self.n_states();
        ModelRecord {
            n_states: k,
            dim: 2,
            prior: self.prior.clone(),
            transition: (0..k).map(|i| self.transition_row(i).to_vec()).collect(),
            states: self
                .emissions
                .iter()
                .map(|e| StateRecord {
                    mean: vec![e.mean.x, e.mean.y],
                    cov: vec![vec![e.cov[(0, 0)], e.cov[(0, 1)]], vec![e.cov[(1, 0)], e.cov[(1, 1)]]],
                })
                .collect(),
            label: label.map(str::to_string),
            roi_names: None,
            meta: None,
        }
    }

    pub fn n_states(&self) -> usize {
        self.prior.len()
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.n_states() + to]
    }

    pub fn transition_row(&self, from: usize) -> &[f64] {
        let k = self.n_states();
        &self.transition[from * k..(from + 1) * k]
    }

    pub fn emissions(&self) -> &[Gaussian2] {
        &self.emissions
    }

    pub fn means(&self) -> Vec<Point> {
        self.emissions.iter().map(|e| e.mean).collect()
    }

    pub(crate) fn log_prior(&self) -> &[f64] {
        &self.log_prior
    }

    pub(crate) fn log_transition(&self, from: usize, to: usize) -> f64 {
        self.log_transition[from * self.n_states() + to]
    }

    /// Reorders states so that new state `i` is old state `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> GaussianHmm {
        let k = self.n_states();
        assert_eq!(order.len(), k, "permutation length");
        let prior = order.iter().map(|&o| self.prior[o]).collect();
        let transition = order
            .iter()
            .map(|&a| order.iter().map(|&b| self.transition(a, b)).collect())
            .collect();
        let emissions = order.iter().map(|&o| self.emissions[o].clone()).collect();
        GaussianHmm::new(prior, transition, emissions).expect("permutation preserves validity")
    }
}
