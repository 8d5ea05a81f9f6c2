use super::FitSet;
use crate::error::Result;
use crate::numerics::{logistic_train, LogisticConfig, LogisticModel};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Softmax {
    pub model: LogisticModel,
}

impl Softmax {
    pub fn fit(set: &FitSet, l2: f64, lr: f64, epochs: usize, seed: u64) -> Result<Self> {
        let config = LogisticConfig {
            l2,
            learning_rate: lr,
            epochs,
            seed,
        };
        Ok(Self {
            model: logistic_train(&set.rows(), &set.slots, set.n_slots, &config)?,
        })
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.model.probabilities(x)
    }
}
