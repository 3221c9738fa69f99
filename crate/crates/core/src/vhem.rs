//! Variational hierarchical EM for clustering Gaussian-emission HMMs.
//!
//! Each base model is scored against each reduced model by a variational
//! lower bound on the expected log-likelihood of a virtual sequence of length
//! τ drawn from the base model ([`elbo_pair`]). The bound is built from the
//! closed-form expected Gaussian log-likelihood between a base state and a
//! reduced state ([`expected_gauss_loglik`]) and a backward recursion over
//! time whose soft-max assignments φ align base states with reduced states.
//! [`reduce`] alternates cluster responsibilities and φ (E-step) with
//! moment-matching updates of the reduced models (M-step).

use std::f64::consts::PI;

use nalgebra::Matrix2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hmm::{Gaussian2, GaussianHmm, HmmError};
use crate::logspace::{ln0, log_sum_exp, softmax};
use crate::Point;

/// Floor applied to reduced initial and transition probabilities after each
/// M-step, before renormalization.
pub const PROBABILITY_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VhemError {
    #[error("no base models")]
    Empty,
    #[error("{reduced} reduced models requested from {base} base models")]
    TooManyClusters { reduced: usize, base: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("base weights: {0}")]
    Weights(String),
    #[error(transparent)]
    Hmm(#[from] HmmError),
}

pub type Result<T> = std::result::Result<T, VhemError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VhemConfig {
    /// Number of reduced models K_r.
    pub n_reduced: usize,
    /// Virtual sequence length τ.
    pub virtual_len: usize,
    /// Virtual samples per base model N_v.
    pub virtual_count: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
}

impl Default for VhemConfig {
    fn default() -> Self {
        VhemConfig {
            n_reduced: 1,
            virtual_len: 19,
            virtual_count: 40,
            max_iters: 100,
            tol: 1e-6,
            n_restarts: 5,
            seed: 0,
        }
    }
}

impl VhemConfig {
    fn validate(&self) -> Result<()> {
        if self.n_reduced == 0 || self.virtual_len == 0 || self.virtual_count == 0 || self.n_restarts == 0 {
            return Err(VhemError::Config(
                "n_reduced, virtual_len, virtual_count and n_restarts must be positive".into(),
            ));
        }
        if !(self.tol >= 0.0) {
            return Err(VhemError::Config("tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// E_{y ~ base}[log N(y; reduced)] in closed form.
pub fn expected_gauss_loglik(base: &Gaussian2, reduced: &Gaussian2) -> f64 {
    let d = base.mean() - reduced.mean();
    let inv = reduced.inv();
    -(2.0 * PI).ln() - 0.5 * reduced.log_det() - 0.5 * ((inv * base.cov()).trace() + d.dot(&(inv * d)))
}

/// [`expected_gauss_loglik`] from raw parameters; fails if either
/// covariance is not positive definite.
pub fn expected_gauss_loglik_raw(
    base_mean: &Point,
    base_cov: &Matrix2<f64>,
    reduced_mean: &Point,
    reduced_cov: &Matrix2<f64>,
) -> Result<f64> {
    let b = Gaussian2::new(*base_mean, *base_cov)?;
    let r = Gaussian2::new(*reduced_mean, *reduced_cov)?;
    Ok(expected_gauss_loglik(&b, &r))
}

/// Lower bound between one base and one reduced model, with the variational
/// assignments that attain it.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboPair {
    /// Lower bound on E_base[log p(Y | reduced)] for one virtual sequence.
    pub bound: f64,
    /// `phi_init[β][ρ]` = φ₁(ρ | β).
    pub phi_init: Vec<Vec<f64>>,
    /// `phi_trans[t - 2][β'][ρ][ρ']` = φ_t(ρ' | ρ, β') for t = 2..=τ.
    pub phi_trans: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Backward recursion
/// `L_t(β,ρ) = ℓ(β,ρ) + Σ_β' A_b(β,β') LSE_ρ'[log A_r(ρ,ρ') + L_{t+1}(β',ρ')]`
/// with `L_{τ+1} = 0`, closed by `E = Σ_β π_b(β) LSE_ρ[log π_r(ρ) + L_1(β,ρ)]`.
pub fn elbo_pair(base: &GaussianHmm, reduced: &GaussianHmm, tau: usize) -> Result<ElboPair> {
    if tau == 0 {
        return Err(VhemError::Config("virtual sequence length must be >= 1".into()));
    }
    let kb = base.n_states();
    let kr = reduced.n_states();
    let ell: Vec<Vec<f64>> = base
        .emissions()
        .iter()
        .map(|b| reduced.emissions().iter().map(|r| expected_gauss_loglik(b, r)).collect())
        .collect();
    let log_ar: Vec<Vec<f64>> = (0..kr)
        .map(|r| reduced.transition_row(r).iter().map(|&p| ln0(p)).collect())
        .collect();

    // next = L_{t+1}; starts as L_{τ+1} = 0
    let mut next = vec![vec![0.0; kr]; kb];
    let mut phi_trans = Vec::with_capacity(tau - 1);
    for t in (1..=tau).rev() {
        // m[β'][ρ] = LSE_ρ'[log A_r(ρ,ρ') + L_{t+1}(β',ρ')]
        let mut m = vec![vec![0.0; kr]; kb];
        let mut phi_t = vec![vec![Vec::new(); kr]; kb];
        for bp in 0..kb {
            for r in 0..kr {
                let logits: Vec<f64> = (0..kr).map(|rp| log_ar[r][rp] + next[bp][rp]).collect();
                m[bp][r] = log_sum_exp(logits.iter().copied());
                if t < tau {
                    phi_t[bp][r] = softmax(&logits);
                }
            }
        }
        if t < tau {
            phi_trans.push(phi_t);
        }
        let mut cur = vec![vec![0.0; kr]; kb];
        for b in 0..kb {
            for r in 0..kr {
                let mut acc = ell[b][r];
                for (bp, mrow) in m.iter().enumerate() {
                    let a = base.transition(b, bp);
                    if a > 0.0 {
                        acc += a * mrow[r];
                    }
                }
                cur[b][r] = acc;
            }
        }
        next = cur;
    }
    phi_trans.reverse();

    let log_pr: Vec<f64> = reduced.prior().iter().map(|&p| ln0(p)).collect();
    let mut bound = 0.0;
    let mut phi_init = Vec::with_capacity(kb);
    for b in 0..kb {
        let logits: Vec<f64> = (0..kr).map(|r| log_pr[r] + next[b][r]).collect();
        let pb = base.prior()[b];
        if pb > 0.0 {
            bound += pb * log_sum_exp(logits.iter().copied());
        }
        phi_init.push(softmax(&logits));
    }
    Ok(ElboPair { bound, phi_init, phi_trans })
}

/// Expected sufficient statistics of one (base, reduced) pair, from a forward
/// pass of the occupancies ν through φ.
#[derive(Debug, Clone)]
struct PairStats {
    /// Σ_β ν₁(β,ρ)
    init: Vec<f64>,
    /// Σ_t Σ_{β,β'} ν_t(β,ρ) A_b(β,β') φ_{t+1}(ρ'|ρ,β')
    trans: Vec<Vec<f64>>,
    /// Σ_t ν_t(β,ρ)
    occ: Vec<Vec<f64>>,
}

fn pair_stats(base: &GaussianHmm, pair: &ElboPair, kr: usize) -> PairStats {
    let kb = base.n_states();
    let mut nu: Vec<Vec<f64>> = (0..kb)
        .map(|b| pair.phi_init[b].iter().map(|p| base.prior()[b] * p).collect())
        .collect();
    let mut init = vec![0.0; kr];
    for row in &nu {
        for r in 0..kr {
            init[r] += row[r];
        }
    }
    let mut trans = vec![vec![0.0; kr]; kr];
    let mut occ = nu.clone();
    for phi in &pair.phi_trans {
        let mut nu_next = vec![vec![0.0; kr]; kb];
        for b in 0..kb {
            for r in 0..kr {
                let v = nu[b][r];
                if v == 0.0 {
                    continue;
                }
                for bp in 0..kb {
                    let a = base.transition(b, bp);
                    if a == 0.0 {
                        continue;
                    }
                    for rp in 0..kr {
                        let f = v * a * phi[bp][r][rp];
                        trans[r][rp] += f;
                        nu_next[bp][rp] += f;
                    }
                }
            }
        }
        for b in 0..kb {
            for r in 0..kr {
                occ[b][r] += nu_next[b][r];
            }
        }
        nu = nu_next;
    }
    PairStats { init, trans, occ }
}

/// Reduced models, mixing weights and base-model responsibilities.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmMixture {
    pub models: Vec<GaussianHmm>,
    pub weights: Vec<f64>,
    /// `assignments[i][j]` = responsibility of reduced model j for base model i.
    pub assignments: Vec<Vec<f64>>,
    /// Final weighted lower bound.
    pub elbo: f64,
    /// Objective after every E-step of the winning restart.
    pub trace: Vec<f64>,
    pub restart: usize,
    pub converged: bool,
}

/// Argmax of each responsibility row; ties go to the lower index.
pub fn hard_assignments(mixture: &HmmMixture) -> Vec<usize> {
    mixture
        .assignments
        .iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let expected = rows * cols / c2(n as u64).max(f64::MIN_POSITIVE);
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

struct EStep {
    pairs: Vec<Vec<ElboPair>>,
    z: Vec<Vec<f64>>,
    objective: f64,
}

fn e_step(base: &[GaussianHmm], bw: &[f64], reduced: &[GaussianHmm], omega: &[f64], cfg: &VhemConfig) -> Result<EStep> {
    let nv = cfg.virtual_count as f64;
    let rows = base
        .par_iter()
        .map(|b| {
            let pairs = reduced
                .iter()
                .map(|r| elbo_pair(b, r, cfg.virtual_len))
                .collect::<Result<Vec<_>>>()?;
            let logits: Vec<f64> = pairs.iter().zip(omega).map(|(p, &w)| ln0(w) + nv * p.bound).collect();
            Ok((pairs, softmax(&logits), log_sum_exp(logits.iter().copied())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut objective = 0.0;
    let mut pairs = Vec::with_capacity(rows.len());
    let mut z = Vec::with_capacity(rows.len());
    for ((p, zi, lse), w) in rows.into_iter().zip(bw) {
        objective += w * lse;
        pairs.push(p);
        z.push(zi);
    }
    Ok(EStep { pairs, z, objective })
}

fn floored(v: &[f64]) -> Vec<f64> {
    let f: Vec<f64> = v.iter().map(|p| p.max(PROBABILITY_FLOOR)).collect();
    let s: f64 = f.iter().sum();
    f.into_iter().map(|p| p / s).collect()
}

fn normalized_or(v: &[f64], fallback: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        v.iter().map(|p| p / s).collect()
    } else {
        fallback.to_vec()
    }
}

/// Per-pair statistics for every (base, reduced) pair.
fn all_stats(base: &[GaussianHmm], reduced: &[GaussianHmm], e: &EStep) -> Vec<Vec<PairStats>> {
    base.par_iter()
        .zip(&e.pairs)
        .map(|(b, row)| {
            row.iter()
                .zip(reduced)
                .map(|(p, r)| pair_stats(b, p, r.n_states()))
                .collect()
        })
        .collect()
}

fn m_step(
    base: &[GaussianHmm],
    bw: &[f64],
    reduced: &[GaussianHmm],
    e: &EStep,
    stats: &[Vec<PairStats>],
    cfg: &VhemConfig,
) -> Result<(Vec<GaussianHmm>, Vec<f64>)> {
    let nv = cfg.virtual_count as f64;
    let kr_models = reduced.len();
    let omega_raw: Vec<f64> = (0..kr_models)
        .map(|j| base.iter().enumerate().map(|(i, _)| bw[i] * e.z[i][j]).sum())
        .collect();
    let omega = normalized_or(&omega_raw, &vec![1.0 / kr_models as f64; kr_models]);

    let mut models = Vec::with_capacity(kr_models);
    for (j, old) in reduced.iter().enumerate() {
        let k = old.n_states();
        let mut init = vec![0.0; k];
        let mut trans = vec![vec![0.0; k]; k];
        let mut wsum = vec![0.0; k];
        let mut msum = vec![Point::zeros(); k];
        for (i, b) in base.iter().enumerate() {
            let c = e.z[i][j] * nv * bw[i];
            if c == 0.0 {
                continue;
            }
            let st = &stats[i][j];
            for r in 0..k {
                init[r] += c * st.init[r];
                for rp in 0..k {
                    trans[r][rp] += c * st.trans[r][rp];
                }
                for (bs, em) in b.emissions().iter().enumerate() {
                    let w = c * st.occ[bs][r];
                    wsum[r] += w;
                    msum[r] += w * em.mean();
                }
            }
        }
        let prior = floored(&normalized_or(&init, old.prior()));
        let transition: Vec<Vec<f64>> = (0..k)
            .map(|r| floored(&normalized_or(&trans[r], old.transition_row(r))))
            .collect();
        let mut emissions = Vec::with_capacity(k);
        for r in 0..k {
            if !(wsum[r] > 1e-300) {
                emissions.push(old.emissions()[r].clone());
                continue;
            }
            let mean = msum[r] / wsum[r];
            let mut cov = Matrix2::zeros();
            for (i, b) in base.iter().enumerate() {
                let c = e.z[i][j] * nv * bw[i];
                if c == 0.0 {
                    continue;
                }
                for (bs, em) in b.emissions().iter().enumerate() {
                    let w = c * stats[i][j].occ[bs][r];
                    let d = em.mean() - mean;
                    cov += w * (em.cov() + d * d.transpose());
                }
            }
            let cov = crate::hmm::floor_covariance(cov / wsum[r]);
            emissions.push(Gaussian2::new(mean, cov)?);
        }
        models.push(GaussianHmm::new(prior, transition, emissions)?);
    }
    Ok((models, omega))
}

struct Run {
    models: Vec<GaussianHmm>,
    omega: Vec<f64>,
    e: EStep,
    trace: Vec<f64>,
    converged: bool,
}

fn run(base: &[GaussianHmm], bw: &[f64], init: Vec<GaussianHmm>, cfg: &VhemConfig) -> Result<Run> {
    let k = init.len();
    let mut models = init;
    let mut omega = vec![1.0 / k as f64; k];
    let mut e = e_step(base, bw, &models, &omega, cfg)?;
    let mut trace = vec![e.objective];
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let stats = all_stats(base, &models, &e);
        let (next, next_omega) = m_step(base, bw, &models, &e, &stats, cfg)?;
        let next_e = e_step(base, bw, &next, &next_omega, cfg)?;
        let delta = next_e.objective - e.objective;
        trace.push(next_e.objective);
        models = next;
        omega = next_omega;
        e = next_e;
        if delta.abs() <= cfg.tol * e.objective.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(Run { models, omega, e, trace, converged })
}

/// Seeds for the first restart: the medoid under the symmetrized bound gap,
/// then farthest-first traversal. Ties resolve to the lower index.
fn farthest_first(base: &[GaussianHmm], bw: &[f64], k: usize, tau: usize) -> Result<Vec<usize>> {
    let n = base.len();
    let e: Vec<Vec<f64>> = base
        .par_iter()
        .map(|b| base.iter().map(|r| Ok(elbo_pair(b, r, tau)?.bound)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let dist = |i: usize, j: usize| 0.5 * ((e[i][i] - e[i][j]) + (e[j][j] - e[j][i]));
    let mut first = 0;
    let mut first_score = f64::INFINITY;
    for i in 0..n {
        let s: f64 = (0..n).map(|j| bw[j] * dist(i, j)).sum();
        if s < first_score {
            first_score = s;
            first = i;
        }
    }
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist(i, first)).collect();
    while chosen.len() < k {
        let mut best = None;
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|b: usize| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("k <= n");
        chosen.push(b);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist(i, b));
        }
    }
    Ok(chosen)
}

/// Clusters `base_models` into `config.n_reduced` representative HMMs.
///
/// `base_weights` defaults to uniform and is normalized to sum to one.
/// Reduced models inherit the state count of the base model that seeds them.
pub fn reduce(base_models: &[GaussianHmm], base_weights: Option<&[f64]>, config: &VhemConfig) -> Result<HmmMixture> {
    config.validate()?;
    let n = base_models.len();
    if n == 0 {
        return Err(VhemError::Empty);
    }
    if config.n_reduced > n {
        return Err(VhemError::TooManyClusters { reduced: config.n_reduced, base: n });
    }
    let bw: Vec<f64> = match base_weights {
        None => vec![1.0 / n as f64; n],
        Some(w) => {
            if w.len() != n {
                return Err(VhemError::Weights(format!("{} weights for {n} models", w.len())));
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(VhemError::Weights("weights must be finite and non-negative".into()));
            }
            let s: f64 = w.iter().sum();
            if !(s > 0.0) {
                return Err(VhemError::Weights("weights sum to zero".into()));
            }
            w.iter().map(|v| v / s).collect()
        }
    };

    let k = config.n_reduced;
    let mut seeds = vec![farthest_first(base_models, &bw, k, config.virtual_len)?];
    for r in 1..config.n_restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        seeds.push(rand::seq::index::sample(&mut rng, n, k).into_vec());
    }
    let runs = seeds
        .into_par_iter()
        .map(|s| run(base_models, &bw, s.iter().map(|&i| base_models[i].clone()).collect(), config))
        .collect::<Result<Vec<_>>>()?;

    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1.e.objective > a.1.e.objective { b } else { a })
        .expect("at least one restart");

    // canonical reduced-state order: descending weighted occupancy
    let stats = all_stats(base_models, &best.models, &best.e);
    let models = best
        .models
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let kr = m.n_states();
            let mut occ = vec![0.0; kr];
            for (i, row) in stats.iter().enumerate() {
                let c = best.e.z[i][j] * bw[i];
                for st in row[j].occ.iter() {
                    for r in 0..kr {
                        occ[r] += c * st[r];
                    }
                }
            }
            let mut order: Vec<usize> = (0..kr).collect();
            order.sort_by(|&a, &b| occ[b].total_cmp(&occ[a]).then(a.cmp(&b)));
            m.permuted(&order)
        })
        .collect();

    Ok(HmmMixture {
        models,
        weights: best.omega,
        assignments: best.e.z,
        elbo: best.e.objective,
        trace: best.trace,
        restart,
        converged: best.converged,
    })
}
