//! Synthetic data: perturbed copies of a model and raw gaze streams that
//! dwell on a given list of fixation targets.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Uniform};

use crate::gaze_io::GazeSample;
use crate::hmm::{Gaussian2, GaussianHmm, Result};
use crate::Point;

/// Perturbation applied by [`jitter_model`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    /// Each mean coordinate moves by a uniform draw in `[-mean_px, mean_px]`.
    pub mean_px: f64,
    /// Rows of π and A are redrawn from Dirichlet(concentration · row).
    pub concentration: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter { mean_px: 5.0, concentration: 50.0 }
    }
}

/// Dirichlet draw centred on `p`. Zero entries stay exactly zero.
pub fn dirichlet_around<R: Rng + ?Sized>(p: &[f64], concentration: f64, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = p
        .iter()
        .map(|&v| {
            if v > 0.0 {
                Gamma::new(concentration * v, 1.0).expect("positive shape").sample(rng)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter().map(|d| d / total).collect()
    } else {
        // every gamma draw underflowed; fall back to the centre
        p.to_vec()
    }
}

/// A perturbed copy of `model`; covariances are kept.
pub fn jitter_model<R: Rng + ?Sized>(model: &GaussianHmm, jitter: &Jitter, rng: &mut R) -> Result<GaussianHmm> {
    let k = model.n_states();
    let prior = dirichlet_around(model.prior(), jitter.concentration, rng);
    let transition = (0..k).map(|i| dirichlet_around(model.transition_row(i), jitter.concentration, rng)).collect();
    let shift = Uniform::new_inclusive(-jitter.mean_px, jitter.mean_px).expect("finite bounds");
    let emissions = model
        .emissions()
        .iter()
        .map(|e| {
            let mean = e.mean() + Point::new(shift.sample(rng), shift.sample(rng));
            Gaussian2::new(mean, *e.cov())
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianHmm::new(prior, transition, emissions)
}

/// Shape of a synthetic gaze stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeStream {
    pub sample_interval_ms: f64,
    pub dwell_ms: f64,
    /// Samples spent travelling between targets.
    pub saccade_samples: usize,
    /// Half-width of the uniform noise added to dwell samples.
    pub noise_px: f64,
}

impl Default for GazeStream {
    fn default() -> Self {
        GazeStream { sample_interval_ms: 4.0, dwell_ms: 250.0, saccade_samples: 3, noise_px: 1.0 }
    }
}

/// Raw samples dwelling on each target in turn, joined by fast linear
/// saccades. With small noise every target yields one fixation.
pub fn gaze_stream<R: Rng + ?Sized>(targets: &[Point], shape: &GazeStream, rng: &mut R) -> Vec<GazeSample> {
    let noise = Uniform::new_inclusive(-shape.noise_px, shape.noise_px).expect("finite bounds");
    let dwell = (shape.dwell_ms / shape.sample_interval_ms).round().max(1.0) as usize;
    let mut out = Vec::new();
    let push = |p: Point, out: &mut Vec<GazeSample>| {
        let t_ms = out.len() as f64 * shape.sample_interval_ms;
        out.push(GazeSample { t_ms, x_px: p.x, y_px: p.y });
    };
    for (i, &target) in targets.iter().enumerate() {
        if i > 0 {
            let from = targets[i - 1];
            for s in 1..=shape.saccade_samples {
                let f = s as f64 / (shape.saccade_samples + 1) as f64;
                push(from + (target - from) * f, &mut out);
            }
        }
        for _ in 0..dwell {
            push(target + Point::new(noise.sample(rng), noise.sample(rng)), &mut out);
        }
    }
    out
}
