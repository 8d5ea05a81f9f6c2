//! Two-parameter Weibull fitting by maximum likelihood, with an optional
//! location shift for data that is not strictly positive.

use crate::error::{Error, Result};

/// Offset that keeps the smallest shifted sample strictly positive.
pub const SHIFT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullParams {
    pub shape: f64,
    pub scale: f64,
    /// Subtracted from a value before evaluating the distribution.
    pub shift: f64,
}

impl WeibullParams {
    pub fn cdf(&self, x: f64) -> f64 {
        let t = x - self.shift;
        if t <= 0.0 {
            0.0
        } else {
            -(-(t / self.scale).powf(self.shape)).exp_m1()
        }
    }

    /// Fits shape and scale to `(s − min(s) + ε)` and records the shift.
    pub fn fit_shifted(scores: &[f64], max_iter: usize, tol: f64) -> Result<Self> {
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let shift = min - SHIFT_EPSILON;
        let shifted: Vec<f64> = scores.iter().map(|s| s - shift).collect();
        let fit = weibull_mle(&shifted, max_iter, tol)?;
        Ok(Self { shift, ..fit })
    }
}

/// Maximum-likelihood shape and scale for strictly positive samples.
///
/// The shape solves `1/k + mean(ln x) − Σ xᵏ ln x / Σ xᵏ = 0` by Newton
/// iteration from `k = 1`, kept inside a bisection bracket; the scale is
/// `(mean xᵏ)^(1/k)`. Samples are normalized by their maximum internally.
pub fn weibull_mle(samples: &[f64], max_iter: usize, tol: f64) -> Result<WeibullParams> {
    if samples.len() < 3 {
        return Err(Error::Degenerate(format!(
            "Weibull fit needs at least 3 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidInput(
            "Weibull samples must be positive and finite".into(),
        ));
    }
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    if max == min {
        return Err(Error::Degenerate("Weibull fit on identical samples".into()));
    }

    let logs: Vec<f64> = samples.iter().map(|x| (x / max).ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / logs.len() as f64;

    // profile score and its derivative; strictly decreasing in k
    let score = |k: f64| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &logs {
            let w = (k * l).exp();
            s0 += w;
            s1 += w * l;
            s2 += w * l * l;
        }
        let r = s1 / s0;
        (1.0 / k + mean_log - r, -1.0 / (k * k) - (s2 / s0 - r * r))
    };

    let mut k = 1.0;
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut converged = false;
    for _ in 0..max_iter {
        let (f, df) = score(k);
        if f > 0.0 {
            lo = k;
        } else {
            hi = k;
        }
        let mut next = k - f / df;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * k
            };
        }
        let step = (next - k).abs();
        k = next;
        if step <= tol * k.max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged {
            iterations: max_iter,
        });
    }

    let mean_pow = logs.iter().map(|l| (k * l).exp()).sum::<f64>() / logs.len() as f64;
    let scale = max * mean_pow.powf(1.0 / k);
    Ok(WeibullParams {
        shape: k,
        scale,
        shift: 0.0,
    })
}
