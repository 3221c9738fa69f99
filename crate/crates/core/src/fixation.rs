//! Dispersion-threshold (I-DT) fixation identification.
//!
//! A window of samples is a fixation candidate when it spans at least
//! `min_duration_ms` and its dispersion, `(max x - min x) + (max y - min y)`,
//! stays within `dispersion_px`. Candidates are grown greedily one sample at a
//! time and emitted as maximal windows; the sweep then resumes after the
//! window. Samples outside every fixation are saccade samples.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaze_io::GazeSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    /// Centroid of the contributing samples.
    pub x_px: f64,
    pub y_px: f64,
    pub start_ms: f64,
    pub duration_ms: f64,
    pub n_samples: usize,
}

impl Fixation {
    pub fn end_ms(&self) -> f64 {
        self.start_ms + self.duration_ms
    }

    pub fn centroid(&self) -> crate::Point {
        crate::Point::new(self.x_px, self.y_px)
    }

    fn from_window(w: &[GazeSample]) -> Self {
        let n = w.len() as f64;
        Fixation {
            x_px: w.iter().map(|s| s.x_px).sum::<f64>() / n,
            y_px: w.iter().map(|s| s.y_px).sum::<f64>() / n,
            start_ms: w[0].t_ms,
            duration_ms: w[w.len() - 1].t_ms - w[0].t_ms,
            n_samples: w.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdtConfig {
    pub dispersion_px: f64,
    pub min_duration_ms: f64,
}

impl Default for IdtConfig {
    fn default() -> Self {
        IdtConfig { dispersion_px: 5.0, min_duration_ms: 100.0 }
    }
}

impl IdtConfig {
    pub fn validate(&self) -> Result<(), FixationError> {
        if !(self.dispersion_px > 0.0 && self.dispersion_px.is_finite()) {
            return Err(FixationError::InvalidConfig(format!(
                "dispersion_px must be positive, got {}",
                self.dispersion_px
            )));
        }
        if !(self.min_duration_ms > 0.0 && self.min_duration_ms.is_finite()) {
            return Err(FixationError::InvalidConfig(format!(
                "min_duration_ms must be positive, got {}",
                self.min_duration_ms
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FixationError {
    #[error("dispersion of an empty window")]
    EmptyWindow,
    #[error("timestamps must be finite and strictly increasing (sample {index}: {prev} then {next})")]
    NonMonotone { index: usize, prev: f64, next: f64 },
    #[error("invalid I-DT configuration: {0}")]
    InvalidConfig(String),
    #[error("no fixations")]
    NoFixations,
}

/// Sum of coordinate ranges over a non-empty window.
pub fn dispersion(window: &[GazeSample]) -> Result<f64, FixationError> {
    let first = window.first().ok_or(FixationError::EmptyWindow)?;
    let (mut x0, mut x1, mut y0, mut y1) = (first.x_px, first.x_px, first.y_px, first.y_px);
    for s in &window[1..] {
        x0 = x0.min(s.x_px);
        x1 = x1.max(s.x_px);
        y0 = y0.min(s.y_px);
        y1 = y1.max(s.y_px);
    }
    Ok((x1 - x0) + (y1 - y0))
}

pub(crate) fn check_monotone(samples: &[GazeSample]) -> Result<(), FixationError> {
    for (i, s) in samples.iter().enumerate() {
        let bad_value = !s.t_ms.is_finite() || !s.x_px.is_finite() || !s.y_px.is_finite();
        let prev = if i > 0 { samples[i - 1].t_ms } else { f64::NEG_INFINITY };
        if bad_value || s.t_ms <= prev {
            return Err(FixationError::NonMonotone { index: i, prev, next: s.t_ms });
        }
    }
    Ok(())
}

/// Running window extremes over one coordinate.
#[derive(Default)]
struct MinMax {
    min: VecDeque<usize>,
    max: VecDeque<usize>,
}

impl MinMax {
    fn push(&mut self, i: usize, v: &[f64]) {
        while self.min.back().is_some_and(|&j| v[j] >= v[i]) {
            self.min.pop_back();
        }
        self.min.push_back(i);
        while self.max.back().is_some_and(|&j| v[j] <= v[i]) {
            self.max.pop_back();
        }
        self.max.push_back(i);
    }

    fn evict_before(&mut self, start: usize) {
        while self.min.front().is_some_and(|&j| j < start) {
            self.min.pop_front();
        }
        while self.max.front().is_some_and(|&j| j < start) {
            self.max.pop_front();
        }
    }

    fn clear(&mut self) {
        self.min.clear();
        self.max.clear();
    }

    /// Range of the window, optionally with one extra candidate value.
    fn range_with(&self, v: &[f64], extra: Option<f64>) -> f64 {
        let mut lo = v[self.min[0]];
        let mut hi = v[self.max[0]];
        if let Some(e) = extra {
            lo = lo.min(e);
            hi = hi.max(e);
        }
        hi - lo
    }
}

/// Segments one trial's samples into fixations.
pub fn detect_fixations(samples: &[GazeSample], config: &IdtConfig) -> Result<Vec<Fixation>, FixationError> {
    config.validate()?;
    check_monotone(samples)?;
    let n = samples.len();
    let xs: Vec<f64> = samples.iter().map(|s| s.x_px).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.y_px).collect();
    let (mut wx, mut wy) = (MinMax::default(), MinMax::default());
    let dispersion_with = |wx: &MinMax, wy: &MinMax, extra: Option<usize>| {
        wx.range_with(&xs, extra.map(|j| xs[j])) + wy.range_with(&ys, extra.map(|j| ys[j]))
    };

    let mut out = Vec::new();
    let mut start = 0;
    // `end` is the inclusive last index already pushed into the extremes.
    let mut end: Option<usize> = None;
    while start < n {
        if end.is_none_or(|e| e < start) {
            wx.clear();
            wy.clear();
            wx.push(start, &xs);
            wy.push(start, &ys);
            end = Some(start);
        }
        let mut e = end.expect("set above");
        while samples[e].t_ms - samples[start].t_ms < config.min_duration_ms {
            e += 1;
            if e == n {
                return Ok(out);
            }
            wx.push(e, &xs);
            wy.push(e, &ys);
        }
        wx.evict_before(start);
        wy.evict_before(start);
        end = Some(e);

        if dispersion_with(&wx, &wy, None) <= config.dispersion_px {
            while e + 1 < n && dispersion_with(&wx, &wy, Some(e + 1)) <= config.dispersion_px {
                e += 1;
                wx.push(e, &xs);
                wy.push(e, &ys);
            }
            out.push(Fixation::from_window(&samples[start..=e]));
            start = e + 1;
            end = None;
        } else {
            start += 1;
        }
    }
    Ok(out)
}

/// Population statistics over the fixations of many trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixationStats {
    pub mean_duration_ms: f64,
    /// Population standard deviation (divisor N).
    pub sd_duration_ms: f64,
    pub mean_count_per_trial: f64,
    pub n_fixations: usize,
    pub n_trials: usize,
}

pub fn fixation_stats<T: AsRef<[Fixation]>>(trials: &[T]) -> Result<FixationStats, FixationError> {
    let durations: Vec<f64> = trials
        .iter()
        .flat_map(|t| t.as_ref().iter().map(|f| f.duration_ms))
        .collect();
    if durations.is_empty() {
        return Err(FixationError::NoFixations);
    }
    let n = durations.len() as f64;
    let mean = durations.iter().sum::<f64>() / n;
    let var = durations.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok(FixationStats {
        mean_duration_ms: mean,
        sd_duration_ms: var.sqrt(),
        mean_count_per_trial: n / trials.len() as f64,
        n_fixations: durations.len(),
        n_trials: trials.len(),
    })
}
