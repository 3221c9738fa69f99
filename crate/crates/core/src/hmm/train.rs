//! MAP Baum-Welch with Dirichlet priors on the initial vector and transition
//! rows and an inverse-Wishart-style prior on each state covariance.
//!
//! Update rules:
//!
//! * `π_k  = (Σ_seq γ_1(k) + α) / (S + Kα)`
//! * `A_jk = (Σ ξ(j,k) + α) / (Σ_k' Σ ξ(j,k') + Kα)`
//! * `μ_k` = γ-weighted mean of the observations
//! * `Σ_k  = (γ-weighted scatter about μ_k + ν₀σ₀²I) / (N_k + ν₀)`, then
//!   eigenvalue-floored at [`MIN_COV_EIGENVALUE`]
//!
//! The objective reported in the trace is the data log-likelihood plus the
//! log prior kernels these updates maximize exactly: `α Σ log p` for every
//! probability vector and `-(ν₀/2) log|Σ| - (ν₀σ₀²/2) tr(Σ⁻¹)` per state.
//! With that pairing every EM iteration is non-decreasing.

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sym_eigenvalues, Gaussian2, GaussianHmm, HmmError, Posteriors, Result, MIN_COV_EIGENVALUE};
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_states: usize,
    /// Symmetric Dirichlet concentration for the prior and transition rows.
    pub dirichlet_alpha: f64,
    /// Standard deviation σ₀ of the isotropic prior covariance, in pixels.
    pub prior_cov_std: f64,
    /// Pseudo-count ν₀ of the covariance prior.
    pub prior_cov_strength: f64,
    pub max_iters: usize,
    /// Relative objective change that counts as converged.
    pub tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_states: 3,
            dirichlet_alpha: 0.01,
            prior_cov_std: 14.0,
            prior_cov_strength: 1.0,
            max_iters: 200,
            tol: 1e-6,
            n_restarts: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HmmError::Training(m.to_string()));
        if self.n_states == 0 {
            return bad("n_states must be >= 1");
        }
        if !(self.dirichlet_alpha > 0.0) {
            return bad("dirichlet_alpha must be > 0");
        }
        if !(self.prior_cov_std > 0.0) {
            return bad("prior_cov_std must be > 0");
        }
        if !(self.prior_cov_strength >= 0.0) {
            return bad("prior_cov_strength must be >= 0");
        }
        if self.n_restarts == 0 {
            return bad("n_restarts must be >= 1");
        }
        if !(self.tol >= 0.0) {
            return bad("tol must be >= 0");
        }
        Ok(())
    }

    fn prior_scale(&self) -> f64 {
        self.prior_cov_strength * self.prior_cov_std * self.prior_cov_std
    }
}

/// Result of [`fit_map`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub model: GaussianHmm,
    /// MAP objective of the winning restart, one entry per evaluated model.
    pub trace: Vec<f64>,
    pub objective: f64,
    pub restart: usize,
    pub converged: bool,
    pub iterations: usize,
}

/// Log prior kernel of a model under `config`.
fn log_prior(model: &GaussianHmm, config: &TrainConfig) -> f64 {
    let a = config.dirichlet_alpha;
    let k = model.n_states();
    let mut lp = a * model.log_prior().iter().sum::<f64>();
    for j in 0..k {
        lp += a * (0..k).map(|s| model.log_transition(j, s)).sum::<f64>();
    }
    let nu = config.prior_cov_strength;
    if nu > 0.0 {
        for e in model.emissions() {
            lp += -0.5 * nu * e.log_det() - 0.5 * config.prior_scale() * e.inv().trace();
        }
    }
    lp
}

/// MAP objective: total data log-likelihood plus log prior kernels.
pub fn map_objective<S: AsRef<[Point]> + Sync>(
    model: &GaussianHmm,
    sequences: &[S],
    config: &TrainConfig,
) -> Result<f64> {
    let ll = sequences
        .iter()
        .map(|s| model.log_likelihood(s.as_ref()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<f64>();
    Ok(ll + log_prior(model, config))
}

struct EStep {
    posteriors: Vec<Posteriors>,
    objective: f64,
}

fn e_step<S: AsRef<[Point]> + Sync>(model: &GaussianHmm, sequences: &[S], config: &TrainConfig) -> Result<EStep> {
    let posteriors = sequences
        .par_iter()
        .map(|s| model.posteriors(s.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let ll: f64 = posteriors.iter().map(|p| p.log_likelihood).sum();
    Ok(EStep { objective: ll + log_prior(model, config), posteriors })
}

pub(crate) fn floor_covariance(cov: Matrix2<f64>) -> Matrix2<f64> {
    let cov = 0.5 * (cov + cov.transpose());
    let (lo, _) = sym_eigenvalues(&cov);
    if lo >= MIN_COV_EIGENVALUE {
        return cov;
    }
    let eig = cov.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(MIN_COV_EIGENVALUE));
    let v = eig.eigenvectors;
    let c = v * Matrix2::from_diagonal(&vals) * v.transpose();
    0.5 * (c + c.transpose())
}

fn m_step<S: AsRef<[Point]>>(
    model: &GaussianHmm,
    sequences: &[S],
    e: &EStep,
    config: &TrainConfig,
) -> Result<GaussianHmm> {
    let k = model.n_states();
    let a = config.dirichlet_alpha;
    let n_seq = sequences.len() as f64;

    let mut first = vec![0.0; k];
    let mut pair = vec![vec![0.0; k]; k];
    let mut occ = vec![0.0; k];
    let mut sum_y = vec![Point::zeros(); k];
    for (post, seq) in e.posteriors.iter().zip(sequences) {
        for s in 0..k {
            first[s] += post.gamma[0][s];
        }
        for xi in &post.xi {
            for j in 0..k {
                for s in 0..k {
                    pair[j][s] += xi[j][s];
                }
            }
        }
        for (g, y) in post.gamma.iter().zip(seq.as_ref()) {
            for s in 0..k {
                occ[s] += g[s];
                sum_y[s] += g[s] * y;
            }
        }
    }

    let prior: Vec<f64> = first.iter().map(|f| (f + a) / (n_seq + k as f64 * a)).collect();
    let transition: Vec<Vec<f64>> = pair
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            row.iter().map(|c| (c + a) / (total + k as f64 * a)).collect()
        })
        .collect();

    let nu = config.prior_cov_strength;
    let mut emissions = Vec::with_capacity(k);
    for s in 0..k {
        let old = &model.emissions()[s];
        if occ[s] + nu <= 1e-300 {
            emissions.push(old.clone());
            continue;
        }
        let mean = if occ[s] > 1e-300 { sum_y[s] / occ[s] } else { *old.mean() };
        let mut scatter = Matrix2::zeros();
        for (post, seq) in e.posteriors.iter().zip(sequences) {
            for (g, y) in post.gamma.iter().zip(seq.as_ref()) {
                let d = y - mean;
                scatter += g[s] * d * d.transpose();
            }
        }
        let cov = (scatter + Matrix2::identity() * config.prior_scale()) / (occ[s] + nu);
        emissions.push(Gaussian2::new(mean, floor_covariance(cov))?);
    }
    GaussianHmm::new(prior, transition, emissions)
}

/// k-means++ seeding: the first centre uniformly, the rest with probability
/// proportional to squared distance from the nearest chosen centre.
fn kmeanspp(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut centres = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - centres[0]).norm_squared()).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
        centres.push(c);
    }
    centres
}

fn initial_model(points: &[Point], config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<GaussianHmm> {
    let k = config.n_states;
    let n = points.len() as f64;
    let mean = points.iter().sum::<Point>() / n;
    let pooled = points.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / (2.0 * n);
    let var = (pooled / k as f64).max(config.prior_cov_std * config.prior_cov_std);
    let emissions = kmeanspp(points, k, rng)
        .into_iter()
        .map(|c| Gaussian2::new(c, Matrix2::identity() * var))
        .collect::<Result<Vec<_>>>()?;
    let off = if k > 1 { 0.2 / (k - 1) as f64 } else { 0.0 };
    let transition = (0..k)
        .map(|i| (0..k).map(|j| if k == 1 { 1.0 } else if i == j { 0.8 } else { off }).collect())
        .collect();
    GaussianHmm::new(vec![1.0 / k as f64; k], transition, emissions)
}

fn run_restart<S: AsRef<[Point]> + Sync>(
    sequences: &[S],
    points: &[Point],
    config: &TrainConfig,
    restart: usize,
) -> Result<FitOutcome> {
    let seed = config.seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = initial_model(points, config, &mut rng)?;
    let mut e = e_step(&model, sequences, config)?;
    let mut trace = vec![e.objective];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        let next = m_step(&model, sequences, &e, config)?;
        let next_e = e_step(&next, sequences, config)?;
        iterations += 1;
        let delta = next_e.objective - e.objective;
        trace.push(next_e.objective);
        model = next;
        e = next_e;
        if delta.abs() <= config.tol * e.objective.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    // canonical order: descending expected occupancy, ties by index
    let k = model.n_states();
    let mut occ = vec![0.0; k];
    for p in &e.posteriors {
        for g in &p.gamma {
            for s in 0..k {
                occ[s] += g[s];
            }
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| occ[b].total_cmp(&occ[a]).then(a.cmp(&b)));
    Ok(FitOutcome {
        model: model.permuted(&order),
        objective: e.objective,
        trace,
        restart,
        converged,
        iterations,
    })
}

/// Fits a K-state model to several observation sequences by MAP-EM with
/// restarts; the restart with the highest final objective wins (ties go to
/// the earlier restart).
pub fn fit_map<S: AsRef<[Point]> + Sync>(sequences: &[S], config: &TrainConfig) -> Result<FitOutcome> {
    config.validate()?;
    if sequences.is_empty() {
        return Err(HmmError::Training("no sequences".into()));
    }
    for s in sequences {
        super::check_sequence(s.as_ref())?;
    }
    let points: Vec<Point> = sequences.iter().flat_map(|s| s.as_ref().iter().copied()).collect();
    if points.len() < config.n_states {
        return Err(HmmError::Training(format!(
            "{} observations for {} states",
            points.len(),
            config.n_states
        )));
    }
    let outcomes = (0..config.n_restarts)
        .into_par_iter()
        .map(|r| run_restart(sequences, &points, config, r))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<FitOutcome> = None;
    for o in outcomes {
        if best.as_ref().is_none_or(|b| o.objective > b.objective) {
            best = Some(o);
        }
    }
    Ok(best.expect("at least one restart"))
}
