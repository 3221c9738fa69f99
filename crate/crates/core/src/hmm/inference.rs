use super::{check_sequence, GaussianHmm, HmmError, Result};
use crate::logspace::{log_sum_exp, softmax};
use crate::Point;

/// State and pairwise posteriors from forward-backward.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    /// `gamma[t][k]` = P(state_t = k | seq).
    pub gamma: Vec<Vec<f64>>,
    /// `xi[t][j][k]` = P(state_t = j, state_{t+1} = k | seq), for t < T-1.
    pub xi: Vec<Vec<Vec<f64>>>,
    pub log_likelihood: f64,
}

impl GaussianHmm {
    /// `log_b[t][k]` = log N(y_t; μ_k, Σ_k).
    pub(crate) fn emission_log_probs(&self, seq: &[Point]) -> Vec<Vec<f64>> {
        seq.iter()
            .map(|y| self.emissions.iter().map(|e| e.log_pdf(y)).collect())
            .collect()
    }

    fn forward(&self, log_b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = self.n_states();
        let mut alpha = Vec::with_capacity(log_b.len());
        alpha.push((0..k).map(|s| self.log_prior[s] + log_b[0][s]).collect::<Vec<_>>());
        for b in &log_b[1..] {
            let prev = alpha.last().expect("non-empty");
            let next = (0..k)
                .map(|s| log_sum_exp((0..k).map(|r| prev[r] + self.log_transition(r, s))) + b[s])
                .collect();
            alpha.push(next);
        }
        alpha
    }

    fn backward(&self, log_b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = self.n_states();
        let t_len = log_b.len();
        let mut beta = vec![vec![0.0; k]; t_len];
        for t in (0..t_len - 1).rev() {
            for s in 0..k {
                beta[t][s] = log_sum_exp(
                    (0..k).map(|r| self.log_transition(s, r) + log_b[t + 1][r] + beta[t + 1][r]),
                );
            }
        }
        beta
    }

    /// Exact log marginal likelihood of `seq` (forward algorithm).
    pub fn log_likelihood(&self, seq: &[Point]) -> Result<f64> {
        check_sequence(seq)?;
        let alpha = self.forward(&self.emission_log_probs(seq));
        Ok(log_sum_exp(alpha.last().expect("non-empty").iter().copied()))
    }

    /// Most probable state path and its joint log-probability. Ties resolve
    /// toward the lower state index at every step.
    pub fn viterbi(&self, seq: &[Point]) -> Result<(Vec<usize>, f64)> {
        check_sequence(seq)?;
        let log_b = self.emission_log_probs(seq);
        let k = self.n_states();
        let t_len = seq.len();
        let mut delta: Vec<f64> = (0..k).map(|s| self.log_prior[s] + log_b[0][s]).collect();
        let mut back = vec![vec![0usize; k]; t_len];
        for t in 1..t_len {
            let mut next = vec![f64::NEG_INFINITY; k];
            for s in 0..k {
                let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
                for r in 0..k {
                    let v = delta[r] + self.log_transition(r, s);
                    if v > best {
                        best = v;
                        arg = r;
                    }
                }
                next[s] = best + log_b[t][s];
                back[t][s] = arg;
            }
            delta = next;
        }
        let (mut best, mut last) = (f64::NEG_INFINITY, 0);
        for (s, &v) in delta.iter().enumerate() {
            if v > best {
                best = v;
                last = s;
            }
        }
        if best == f64::NEG_INFINITY || best.is_nan() {
            return Err(HmmError::NoAdmissiblePath);
        }
        let mut path = vec![0; t_len];
        path[t_len - 1] = last;
        for t in (1..t_len).rev() {
            path[t - 1] = back[t][path[t]];
        }
        Ok((path, best))
    }

    /// Forward-backward posteriors.
    pub fn posteriors(&self, seq: &[Point]) -> Result<Posteriors> {
        check_sequence(seq)?;
        let log_b = self.emission_log_probs(seq);
        let alpha = self.forward(&log_b);
        let beta = self.backward(&log_b);
        let ll = log_sum_exp(alpha.last().expect("non-empty").iter().copied());
        if !ll.is_finite() {
            return Err(HmmError::NoAdmissiblePath);
        }
        let k = self.n_states();
        // normalize per step rather than by `ll`, so rounding drift in long
        // recursions does not leak into the marginals
        let gamma = alpha
            .iter()
            .zip(&beta)
            .map(|(a, b)| softmax(&(0..k).map(|s| a[s] + b[s]).collect::<Vec<_>>()))
            .collect();
        let xi = (0..seq.len() - 1)
            .map(|t| {
                let flat: Vec<f64> = (0..k * k)
                    .map(|js| {
                        let (j, s) = (js / k, js % k);
                        alpha[t][j] + self.log_transition(j, s) + log_b[t + 1][s] + beta[t + 1][s]
                    })
                    .collect();
                softmax(&flat).chunks(k).map(|c| c.to_vec()).collect()
            })
            .collect();
        Ok(Posteriors { gamma, xi, log_likelihood: ll })
    }

    /// Most probable state trajectory of the chain alone (no observations),
    /// with the same lower-index tie rule as [`GaussianHmm::viterbi`].
    pub fn most_probable_states(&self, len: usize) -> Vec<usize> {
        if len == 0 {
            return Vec::new();
        }
        let k = self.n_states();
        let mut delta = self.log_prior.clone();
        let mut back = vec![vec![0usize; k]; len];
        for b in back.iter_mut().skip(1) {
            let mut next = vec![f64::NEG_INFINITY; k];
            for s in 0..k {
                for r in 0..k {
                    let v = delta[r] + self.log_transition(r, s);
                    if v > next[s] {
                        next[s] = v;
                        b[s] = r;
                    }
                }
            }
            delta = next;
        }
        let mut last = 0;
        for s in 1..k {
            if delta[s] > delta[last] {
                last = s;
            }
        }
        let mut path = vec![0; len];
        path[len - 1] = last;
        for t in (1..len).rev() {
            path[t - 1] = back[t][path[t]];
        }
        path
    }
}
