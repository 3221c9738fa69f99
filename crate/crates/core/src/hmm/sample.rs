use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::GaussianHmm;
use crate::Point;

/// Observations drawn from a model together with the hidden states that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSequence {
    pub observations: Vec<Point>,
    pub states: Vec<usize>,
}

/// Index drawn from a probability vector; zero-probability entries are never
/// returned.
pub(crate) fn draw_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

impl GaussianHmm {
    /// Ancestral sampling of `len` steps, deterministic per `seed`.
    pub fn sample(&self, len: usize, seed: u64) -> SampledSequence {
        self.sample_with(len, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> SampledSequence {
        let mut states = Vec::with_capacity(len);
        let mut observations = Vec::with_capacity(len);
        let mut s = 0;
        for t in 0..len {
            s = if t == 0 {
                draw_categorical(self.prior(), rng)
            } else {
                draw_categorical(self.transition_row(s), rng)
            };
            let e = &self.emissions()[s];
            let z = Point::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            observations.push(e.mean() + e.chol() * z);
            states.push(s);
        }
        SampledSequence { observations, states }
    }
}
