//! Reference implementations used as test oracles. Nothing here calls into
//! the library's recursions; only model accessors are used.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::Matrix2;
use rand::Rng;
use scanpath::hmm::{Gaussian2, GaussianHmm};
use scanpath::{GazeSample, Point};

/// Random model with K states. Roughly one in five probabilities is an exact
/// zero, but every row keeps at least one positive entry.
pub fn random_model<R: Rng>(k: usize, rng: &mut R) -> GaussianHmm {
    let stochastic = |rng: &mut R| {
        let mut v: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        if k > 1 {
            for x in v.iter_mut() {
                if rng.random_bool(0.2) {
                    *x = 0.0;
                }
            }
            if v.iter().all(|&x| x == 0.0) {
                v[rng.random_range(0..k)] = 1.0;
            }
        }
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    let prior = stochastic(rng);
    let transition = (0..k).map(|_| stochastic(rng)).collect();
    let emissions = (0..k)
        .map(|_| {
            let mean = Point::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
            let l = Matrix2::new(rng.random_range(3.0..30.0), 0.0, rng.random_range(-10.0..10.0), rng.random_range(3.0..30.0));
            Gaussian2::new(mean, l * l.transpose()).unwrap()
        })
        .collect();
    GaussianHmm::new(prior, transition, emissions).unwrap()
}

pub fn random_points<R: Rng>(t: usize, rng: &mut R) -> Vec<Point> {
    (0..t).map(|_| Point::new(rng.random_range(-20.0..220.0), rng.random_range(-20.0..220.0))).collect()
}

/// Bivariate normal log-density written out with the explicit 2×2 inverse.
pub fn logpdf(y: &Point, mean: &Point, cov: &Matrix2<f64>) -> f64 {
    let (a, b, c, d) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 0)], cov[(1, 1)]);
    let det = a * d - b * c;
    let (dx, dy) = (y.x - mean.x, y.y - mean.y);
    let quad = (d * dx * dx - (b + c) * dx * dy + a * dy * dy) / det;
    -(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * quad
}

fn ln(p: f64) -> f64 {
    if p == 0.0 {
        f64::NEG_INFINITY
    } else {
        p.ln()
    }
}

pub fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Every state path of length `t` over `k` states, in lexicographic order.
pub fn all_paths(k: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |s| {
                    let mut q = p.clone();
                    q.push(s);
                    q
                })
            })
            .collect();
    }
    out
}

pub fn log_joint(m: &GaussianHmm, seq: &[Point], path: &[usize]) -> f64 {
    let e = m.emissions();
    let mut lp = ln(m.prior()[path[0]]);
    for (t, (&s, y)) in path.iter().zip(seq).enumerate() {
        if t > 0 {
            lp += ln(m.transition(path[t - 1], s));
        }
        lp += logpdf(y, e[s].mean(), e[s].cov());
    }
    lp
}

/// Enumeration over all paths.
pub struct BruteForce {
    pub loglik: f64,
    pub best_path: Vec<usize>,
    pub best_score: f64,
    pub gamma: Vec<Vec<f64>>,
    pub xi: Vec<Vec<Vec<f64>>>,
}

pub fn brute_force(m: &GaussianHmm, seq: &[Point]) -> BruteForce {
    let k = m.n_states();
    let t = seq.len();
    let paths = all_paths(k, t);
    let scores: Vec<f64> = paths.iter().map(|p| log_joint(m, seq, p)).collect();
    let loglik = lse(&scores);
    let best_score = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // among maximal paths, the one a lower-index-first backtrack produces is
    // the minimum when paths are compared from the last step backwards
    let best_path = paths
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s == best_score)
        .map(|(p, _)| p.clone())
        .min_by(|a, b| a.iter().rev().cmp(b.iter().rev()))
        .unwrap();
    let mut gamma = vec![vec![0.0; k]; t];
    let mut xi = vec![vec![vec![0.0; k]; k]; t.saturating_sub(1)];
    for (p, &s) in paths.iter().zip(&scores) {
        let w = (s - loglik).exp();
        for (i, &st) in p.iter().enumerate() {
            gamma[i][st] += w;
            if i + 1 < t {
                xi[i][st][p[i + 1]] += w;
            }
        }
    }
    BruteForce { loglik, best_path, best_score, gamma, xi }
}

/// Quadratic I-DT sweep recomputing every dispersion from scratch.
pub fn naive_idt(samples: &[GazeSample], dispersion_px: f64, min_duration_ms: f64) -> Vec<(f64, f64, f64, f64, usize)> {
    let disp = |w: &[GazeSample]| {
        let fold = |f: fn(&GazeSample) -> f64| {
            w.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (x0, x1) = fold(|s| s.x_px);
        let (y0, y1) = fold(|s| s.y_px);
        (x1 - x0) + (y1 - y0)
    };
    let n = samples.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let Some(mut end) = (start..n).find(|&e| samples[e].t_ms - samples[start].t_ms >= min_duration_ms) else {
            break;
        };
        if disp(&samples[start..=end]) <= dispersion_px {
            while end + 1 < n && disp(&samples[start..=end + 1]) <= dispersion_px {
                end += 1;
            }
            let w = &samples[start..=end];
            let c = w.len() as f64;
            out.push((
                w.iter().map(|s| s.x_px).sum::<f64>() / c,
                w.iter().map(|s| s.y_px).sum::<f64>() / c,
                w[0].t_ms,
                w[w.len() - 1].t_ms - w[0].t_ms,
                w.len(),
            ));
            start = end + 1;
        } else {
            start += 1;
        }
    }
    out
}

/// Gaze stream alternating between jittery dwells and jumps, with irregular
/// sampling intervals.
pub fn random_stream<R: Rng>(n: usize, rng: &mut R) -> Vec<GazeSample> {
    let mut t = 0.0;
    let mut c = Point::new(500.0, 400.0);
    let jitter = rng.random_range(0.5..4.0);
    (0..n)
        .map(|_| {
            t += rng.random_range(1..=12) as f64;
            if rng.random_bool(0.03) {
                c = Point::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..800.0));
            }
            GazeSample {
                t_ms: t,
                x_px: c.x + rng.random_range(-jitter..jitter),
                y_px: c.y + rng.random_range(-jitter..jitter),
            }
        })
        .collect()
}
