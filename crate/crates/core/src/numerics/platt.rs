//! Sigmoid calibration of decision scores: `P(y = +1 | s) = 1 / (1 + exp(A·s + B))`.

use crate::error::{Error, Result};

const MIN_STEP: f64 = 1e-10;
const HESSIAN_RIDGE: f64 = 1e-12;
const GRADIENT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattScaling {
    pub a: f64,
    pub b: f64,
}

impl PlattScaling {
    pub fn probability(&self, score: f64) -> f64 {
        let z = self.a * score + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

fn objective(scores: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let z = s * a + b;
            if z >= 0.0 {
                t * z + (-z).exp().ln_1p()
            } else {
                (t - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

/// Fits `(A, B)` by damped Newton on the smoothed-target log-likelihood.
///
/// Targets are `(N₊+1)/(N₊+2)` for positives and `1/(N₋+2)` for negatives.
/// Constant scores carry no signal; they yield `A = 0` and a sigmoid equal to
/// the mean smoothed target.
pub fn platt_fit(scores: &[f64], labels: &[f64], max_iter: usize) -> Result<PlattScaling> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(
            "scores and labels differ in length".into(),
        ));
    }
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::Degenerate("Platt scaling needs both labels".into()));
    }
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = labels
        .iter()
        .map(|&y| if y > 0.0 { hi } else { lo })
        .collect();

    let (min, max) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    if min == max {
        let mean_t = targets.iter().sum::<f64>() / targets.len() as f64;
        return Ok(PlattScaling {
            a: 0.0,
            b: (1.0 / mean_t - 1.0).ln(),
        });
    }

    let mut a = 0.0;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let mut fval = objective(scores, &targets, a, b);

    for _ in 0..max_iter {
        let (mut h11, mut h22, mut h21) = (HESSIAN_RIDGE, HESSIAN_RIDGE, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&s, &t) in scores.iter().zip(&targets) {
            let z = s * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += s * s * d2;
            h22 += d2;
            h21 += s * d2;
            let d1 = t - p;
            g1 += s * d1;
            g2 += d1;
        }
        if g1.abs() < GRADIENT_EPS && g2.abs() < GRADIENT_EPS {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(scores, &targets, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < MIN_STEP {
            break;
        }
    }
    Ok(PlattScaling { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn symmetric_scores_center_the_sigmoid() {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..25 {
            scores.extend([-1.0, 1.0]);
            labels.extend([-1.0, 1.0]);
        }
        let p = platt_fit(&scores, &labels, 100).unwrap();
        assert!(p.b.abs() < 1e-3, "{p:?}");
        assert!(p.a < 0.0);
        assert!(p.probability(1.0) > 0.9);
    }

    #[test]
    fn uninformative_scores_give_base_rate() {
        let mut rng = Rng::new(2);
        let n = 2000;
        let scores: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let labels: Vec<f64> = (0..n)
            .map(|_| if rng.uniform() < 0.3 { 1.0 } else { -1.0 })
            .collect();
        let base = labels.iter().filter(|&&y| y > 0.0).count() as f64 / n as f64;
        let p = platt_fit(&scores, &labels, 100).unwrap();
        for s in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            assert!(
                (p.probability(s) - base).abs() < 0.05,
                "s={s}: {}",
                p.probability(s)
            );
        }
    }

    #[test]
    fn constant_scores() {
        let scores = [0.7; 10];
        let labels = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0];
        let p = platt_fit(&scores, &labels, 100).unwrap();
        assert_eq!(p.a, 0.0);
        let smoothed = (3.0 * (4.0 / 5.0) + 7.0 * (1.0 / 9.0)) / 10.0;
        assert!((p.probability(0.7) - smoothed).abs() < 1e-12);
    }

    #[test]
    fn single_label_is_degenerate() {
        assert!(platt_fit(&[0.0, 1.0], &[1.0, 1.0], 10).is_err());
    }
}
