use super::FitSet;
use crate::error::{Error, Result};
use crate::numerics::svm::DEFAULT_TOL;
use crate::numerics::{
    enclosing_ball_train, platt_fit, svm_train_binary, BinarySvm, EnclosingBall, KernelSpec,
    PlattScaling, Rng, WeibullParams,
};

pub(crate) const DEFAULT_TAIL_FRACTION: f64 = 0.5;
const PLATT_ITERATIONS: usize = 100;
const WEIBULL_ITERATIONS: usize = 200;
const WEIBULL_TOL: f64 = 1e-12;
const MIN_TAIL: usize = 3;
const FOLD_TAG: u64 = 0xF01D;

fn one_vs_all(set: &FitSet, slot: usize) -> Vec<f64> {
    set.slots
        .iter()
        .map(|&s| if s == slot { 1.0 } else { -1.0 })
        .collect()
}

/// One binary machine per class, each trained one-vs-all.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Ova {
    pub machines: Vec<BinarySvm>,
}

impl Ova {
    pub fn fit(set: &FitSet, c: f64, kernel: KernelSpec) -> Result<Self> {
        let rows = set.rows();
        let machines = (0..set.n_slots)
            .map(|slot| {
                Ok(svm_train_binary(&rows, &one_vs_all(set, slot), c, kernel, DEFAULT_TOL)?.model)
            })
            .collect::<Result<_>>()?;
        Ok(Self { machines })
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.machines.iter().map(|m| m.decision(x)).collect()
    }
}

/// Decision values for every training row from machines that did not see
/// it, using a stratified two-fold split. Falls back to in-sample values when
/// a fold lacks one of the labels.
fn out_of_fold_scores(
    set: &FitSet,
    slot: usize,
    c: f64,
    kernel: KernelSpec,
    seed: u64,
    full: &BinarySvm,
) -> Result<Vec<f64>> {
    let labels = one_vs_all(set, slot);
    let mut fold = vec![0usize; labels.len()];
    let mut rng = Rng::derived(seed, FOLD_TAG + slot as u64);
    for side in [1.0, -1.0] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == side).collect();
        rng.shuffle(&mut idx);
        for (k, i) in idx.into_iter().enumerate() {
            fold[i] = k % 2;
        }
    }
    let mut scores = vec![0.0; labels.len()];
    for held in 0..2 {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] != held).collect();
        let train_labels: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
        if !(train_labels.contains(&1.0) && train_labels.contains(&-1.0)) {
            return Ok(set.xs.iter().map(|x| full.decision(x)).collect());
        }
        let rows: Vec<&[f64]> = train.iter().map(|&i| set.xs[i].as_slice()).collect();
        let machine = svm_train_binary(&rows, &train_labels, c, kernel, DEFAULT_TOL)?.model;
        for i in (0..labels.len()).filter(|&i| fold[i] == held) {
            scores[i] = machine.decision(&set.xs[i]);
        }
    }
    Ok(scores)
}

/// One-vs-all machines with a Platt sigmoid per class.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Psvm {
    pub ova: Ova,
    pub platt: Vec<PlattScaling>,
}

impl Psvm {
    pub fn fit(set: &FitSet, c: f64, kernel: KernelSpec, seed: u64) -> Result<Self> {
        let ova = Ova::fit(set, c, kernel)?;
        let platt = (0..set.n_slots)
            .map(|slot| {
                let scores = out_of_fold_scores(set, slot, c, kernel, seed, &ova.machines[slot])?;
                platt_fit(&scores, &one_vs_all(set, slot), PLATT_ITERATIONS)
            })
            .collect::<Result<_>>()?;
        Ok(Self { ova, platt })
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.ova
            .machines
            .iter()
            .zip(&self.platt)
            .map(|(m, p)| p.probability(m.decision(x)))
            .collect()
    }
}

/// One-vs-all machines whose positive scores are calibrated by a Weibull fit
/// to the low tail, the positive training scores nearest the boundary.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Pisvm {
    pub ova: Ova,
    pub weibull: Vec<WeibullParams>,
}

impl Pisvm {
    pub fn fit(set: &FitSet, c: f64, kernel: KernelSpec, tail_fraction: f64) -> Result<Self> {
        let ova = Ova::fit(set, c, kernel)?;
        let weibull = (0..set.n_slots)
            .map(|slot| {
                let machine = &ova.machines[slot];
                let mut positives: Vec<f64> = set
                    .rows_of(slot)
                    .iter()
                    .map(|x| machine.decision(x))
                    .collect();
                if positives.len() < MIN_TAIL {
                    return Err(Error::Degenerate(format!(
                        "PISVM needs at least {MIN_TAIL} samples per class"
                    )));
                }
                positives.sort_by(f64::total_cmp);
                let keep = ((tail_fraction * positives.len() as f64).ceil() as usize)
                    .clamp(MIN_TAIL, positives.len());
                WeibullParams::fit_shifted(&positives[..keep], WEIBULL_ITERATIONS, WEIBULL_TOL)
            })
            .collect::<Result<_>>()?;
        Ok(Self { ova, weibull })
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.ova
            .machines
            .iter()
            .zip(&self.weibull)
            .map(|(m, w)| w.cdf(m.decision(x)))
            .collect()
    }
}

/// One enclosing ball per class.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Occ {
    pub balls: Vec<EnclosingBall>,
}

impl Occ {
    pub fn fit(set: &FitSet, nu: f64, kernel: KernelSpec) -> Result<Self> {
        let balls = (0..set.n_slots)
            .map(|slot| enclosing_ball_train(&set.rows_of(slot), nu, kernel, DEFAULT_TOL))
            .collect::<Result<_>>()?;
        Ok(Self { balls })
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.balls.iter().map(|b| b.score(x)).collect()
    }
}

/// A ball around all known data gates a Platt-calibrated classifier.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TwoStage {
    pub gate: EnclosingBall,
    pub psvm: Psvm,
}

/// Score in every slot when the gate rejects; below any threshold in `[0, 1]`.
pub(crate) const GATE_REJECT: f64 = -1.0;

impl TwoStage {
    pub fn fit(set: &FitSet, nu: f64, c: f64, kernel: KernelSpec, seed: u64) -> Result<Self> {
        Ok(Self {
            gate: enclosing_ball_train(&set.rows(), nu, kernel, DEFAULT_TOL)?,
            psvm: Psvm::fit(set, c, kernel, seed)?,
        })
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        if self.gate.score(x) >= 0.0 {
            self.psvm.scores(x)
        } else {
            vec![GATE_REJECT; self.psvm.platt.len()]
        }
    }
}
