//! Log-space helpers shared by the recursions.

/// Log-sum-exp over an iterator; empty or all `-inf` gives `-inf`.
pub(crate) fn log_sum_exp<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalized softmax of log-weights. All `-inf` input yields a uniform vector.
pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs.iter().copied());
    if lse == f64::NEG_INFINITY {
        return vec![1.0 / xs.len() as f64; xs.len()];
    }
    let mut out: Vec<f64> = xs.iter().map(|&x| (x - lse).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

/// `ln(p)` with exact zeros mapped to `-inf`.
pub(crate) fn ln0(p: f64) -> f64 {
    if p == 0.0 {
        f64::NEG_INFINITY
    } else {
        p.ln()
    }
}
