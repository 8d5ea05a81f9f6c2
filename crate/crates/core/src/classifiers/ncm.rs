use super::FitSet;
use crate::numerics::softmax;

/// Nearest class mean; scores are a softmax over negative Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Ncm {
    pub means: Vec<Vec<f64>>,
}

impl Ncm {
    pub fn fit(set: &FitSet) -> Self {
        let dim = set.xs.first().map_or(0, Vec::len);
        let means = (0..set.n_slots)
            .map(|slot| {
                let rows = set.rows_of(slot);
                let mut m = vec![0.0; dim];
                for r in &rows {
                    m.iter_mut().zip(*r).for_each(|(a, b)| *a += b);
                }
                m.iter_mut().for_each(|a| *a /= rows.len() as f64);
                m
            })
            .collect();
        Self { means }
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let neg: Vec<f64> = self
            .means
            .iter()
            .map(|m| {
                -m.iter()
                    .zip(x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        softmax(&neg)
    }
}
