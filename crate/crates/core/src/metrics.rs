//! Confusion matrices over `n` known classes plus unknown, and the open-set
//! metric suite derived from them.
//!
//! Row index is the true label, column index the prediction; index `n` is the
//! unknown label. For class `i`: `TPᵢ = counts[i][i]`, `FPᵢ` is the rest of
//! column `i` and `FNᵢ` the rest of row `i`. The open-set F-measures sum over
//! known classes only, so the unknown label never earns true positives but
//! still charges false positives and false negatives to the known classes.

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; (n + 1) * (n + 1)],
        }
    }

    /// Builds a matrix from row-major counts of shape `(n+1)×(n+1)`.
    pub fn from_counts(n: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != (n + 1) * (n + 1) {
            return Err(Error::InvalidInput(format!(
                "expected {} counts for n = {n}",
                (n + 1) * (n + 1)
            )));
        }
        Ok(Self { n, counts })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    fn index(&self, label: Label) -> Result<usize> {
        match label {
            Label::Unknown => Ok(self.n),
            Label::Known(id) if id < self.n => Ok(id),
            Label::Known(id) => Err(Error::InvalidInput(format!(
                "class id {id} outside confusion matrix with n = {}",
                self.n
            ))),
        }
    }

    pub fn record(&mut self, truth: Label, prediction: Label) -> Result<()> {
        let (t, p) = (self.index(truth)?, self.index(prediction)?);
        self.counts[t * (self.n + 1) + p] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * (self.n + 1) + predicted]
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        (0..=self.n).map(|j| self.get(i, j)).sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..=self.n).map(|i| self.get(i, j)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn tp(&self, i: usize) -> u64 {
        self.get(i, i)
    }

    pub fn fp(&self, i: usize) -> u64 {
        self.col_sum(i) - self.tp(i)
    }

    pub fn fn_(&self, i: usize) -> u64 {
        self.row_sum(i) - self.tp(i)
    }

    fn known_total(&self) -> u64 {
        (0..self.n).map(|i| self.row_sum(i)).sum()
    }
}

pub fn confusion(truths: &[Label], predictions: &[Label], n: usize) -> Result<ConfusionMatrix> {
    if truths.len() != predictions.len() {
        return Err(Error::InvalidInput(format!(
            "{} truths but {} predictions",
            truths.len(),
            predictions.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(n);
    for (&t, &p) in truths.iter().zip(predictions) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Accuracy on known-truth samples, exact class required. `None` without known samples.
pub fn aks(cm: &ConfusionMatrix) -> Option<f64> {
    let correct: u64 = (0..cm.n).map(|i| cm.get(i, i)).sum();
    ratio(correct, cm.known_total())
}

/// Fraction of unknown-truth samples predicted unknown. `None` without unknown samples.
pub fn aus(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.get(cm.n, cm.n), cm.row_sum(cm.n))
}

/// Fraction of known-truth samples predicted as any known class.
pub fn dks(cm: &ConfusionMatrix) -> Option<f64> {
    let accepted: u64 = (0..cm.n).map(|i| cm.row_sum(i) - cm.get(i, cm.n)).sum();
    ratio(accepted, cm.known_total())
}

pub fn dus(cm: &ConfusionMatrix) -> Option<f64> {
    aus(cm)
}

/// Plain accuracy over every sample.
pub fn accuracy(cm: &ConfusionMatrix) -> Option<f64> {
    let correct: u64 = (0..=cm.n).map(|i| cm.get(i, i)).sum();
    ratio(correct, cm.total())
}

/// Mean of two count ratios `a/b` and `c/d`, rounded once from `(a·d + c·b) / 2bd`.
fn balanced(
    known: (u64, u64),
    unknown: (u64, u64),
    allow_partial: bool,
    what: &str,
) -> Result<f64> {
    let ((kn, kd), (un, ud)) = (known, unknown);
    match (kd > 0, ud > 0) {
        (true, true) => {
            let num = u128::from(kn) * u128::from(ud) + u128::from(un) * u128::from(kd);
            let den = 2 * u128::from(kd) * u128::from(ud);
            Ok(num as f64 / den as f64)
        }
        (true, false) if allow_partial => Ok(kn as f64 / kd as f64),
        (false, true) if allow_partial => Ok(un as f64 / ud as f64),
        _ => Err(Error::InvalidInput(format!(
            "{what} needs both known and unknown samples"
        ))),
    }
}

fn unknown_counts(cm: &ConfusionMatrix) -> (u64, u64) {
    (cm.get(cm.n, cm.n), cm.row_sum(cm.n))
}

/// Normalized accuracy `(AKS + AUS) / 2`.
///
/// With `allow_partial`, a population with no samples is skipped and the
/// defined side is returned alone.
pub fn na(cm: &ConfusionMatrix, allow_partial: bool) -> Result<f64> {
    let correct: u64 = (0..cm.n).map(|i| cm.get(i, i)).sum();
    balanced(
        (correct, cm.known_total()),
        unknown_counts(cm),
        allow_partial,
        "NA",
    )
}

/// Detection accuracy `(DKS + DUS) / 2`.
pub fn da(cm: &ConfusionMatrix, allow_partial: bool) -> Result<f64> {
    let accepted: u64 = (0..cm.n).map(|i| cm.row_sum(i) - cm.get(i, cm.n)).sum();
    balanced(
        (accepted, cm.known_total()),
        unknown_counts(cm),
        allow_partial,
        "DA",
    )
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn macro_f(cm: &ConfusionMatrix, classes: usize) -> f64 {
    if classes == 0 {
        return 0.0;
    }
    let (mut p, mut r) = (0.0, 0.0);
    for i in 0..classes {
        let tp = cm.tp(i);
        p += ratio(tp, tp + cm.fp(i)).unwrap_or(0.0);
        r += ratio(tp, tp + cm.fn_(i)).unwrap_or(0.0);
    }
    harmonic(p / classes as f64, r / classes as f64)
}

fn micro_f(cm: &ConfusionMatrix, classes: usize) -> f64 {
    let (mut tp, mut tp_fp, mut tp_fn) = (0, 0, 0);
    for i in 0..classes {
        tp += cm.tp(i);
        tp_fp += cm.tp(i) + cm.fp(i);
        tp_fn += cm.tp(i) + cm.fn_(i);
    }
    harmonic(
        ratio(tp, tp_fp).unwrap_or(0.0),
        ratio(tp, tp_fn).unwrap_or(0.0),
    )
}

/// Open-set macro F-measure: harmonic mean of precision and recall, each
/// averaged over the `n` known classes.
pub fn osfm_macro(cm: &ConfusionMatrix) -> f64 {
    macro_f(cm, cm.n)
}

/// Open-set micro F-measure: counts pooled over the `n` known classes.
pub fn osfm_micro(cm: &ConfusionMatrix) -> f64 {
    micro_f(cm, cm.n)
}

/// Macro F-measure treating unknown as an ordinary `(n+1)`-th class.
pub fn fm_macro(cm: &ConfusionMatrix) -> f64 {
    macro_f(cm, cm.n + 1)
}

pub fn fm_micro(cm: &ConfusionMatrix) -> f64 {
    micro_f(cm, cm.n + 1)
}

/// Every metric computed from one confusion matrix.
///
/// The four per-population rates are `None` when their population is absent,
/// which is only allowed with `allow_partial`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aks: Option<f64>,
    pub aus: Option<f64>,
    pub na: f64,
    pub da: f64,
    pub dks: Option<f64>,
    pub dus: Option<f64>,
    pub osfm_macro: f64,
    pub osfm_micro: f64,
    pub fm_macro: f64,
    pub fm_micro: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn from_confusion(cm: ConfusionMatrix, allow_partial: bool) -> Result<Self> {
        Ok(Self {
            aks: aks(&cm),
            aus: aus(&cm),
            na: na(&cm, allow_partial)?,
            da: da(&cm, allow_partial)?,
            dks: dks(&cm),
            dus: dus(&cm),
            osfm_macro: osfm_macro(&cm),
            osfm_micro: osfm_micro(&cm),
            fm_macro: fm_macro(&cm),
            fm_micro: fm_micro(&cm),
            confusion: cm,
        })
    }
}

pub fn full_report(
    truths: &[Label],
    predictions: &[Label],
    n: usize,
    allow_partial: bool,
) -> Result<MetricsReport> {
    MetricsReport::from_confusion(confusion(truths, predictions, n)?, allow_partial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Known as K, Unknown as U};

    /// Two known classes of 10 plus 10 unknowns:
    /// class 0 → 6 right, 2 to class 1, 2 rejected;
    /// class 1 → 8 right, 1 to class 0, 1 rejected;
    /// unknown → 7 rejected, 2 to class 0, 1 to class 1.
    pub(crate) fn worked_example() -> (Vec<Label>, Vec<Label>) {
        let mut t = Vec::new();
        let mut p = Vec::new();
        let mut push = |truth, pred, k| {
            for _ in 0..k {
                t.push(truth);
                p.push(pred);
            }
        };
        push(K(0), K(0), 6);
        push(K(0), K(1), 2);
        push(K(0), U, 2);
        push(K(1), K(1), 8);
        push(K(1), K(0), 1);
        push(K(1), U, 1);
        push(U, U, 7);
        push(U, K(0), 2);
        push(U, K(1), 1);
        (t, p)
    }

    #[test]
    fn confusion_cases() {
        let cm = confusion(&[], &[], 3).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(cm.counts().iter().all(|&c| c == 0));

        let cm = confusion(&[K(0), K(1), U], &[K(0), U, K(1)], 2).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(1, 1), cm.get(2, 2)), (1, 0, 0));
        assert_eq!(cm.get(1, 2), 1);
        assert_eq!(cm.get(2, 1), 1);

        assert!(confusion(&[K(0)], &[], 2).is_err());
        assert!(confusion(&[K(2)], &[K(0)], 2).is_err());
    }

    #[test]
    fn worked_example_values() {
        let (t, p) = worked_example();
        let r = full_report(&t, &p, 2, false).unwrap();
        assert_eq!(r.aks, Some(0.7));
        assert_eq!(r.aus, Some(0.7));
        assert_eq!(r.na, 0.7);
        assert_eq!(r.dks, Some(0.85));
        assert_eq!(r.dus, Some(0.7));
        assert_eq!(r.da, 0.775);
        assert_eq!(r.osfm_micro, 0.7);
        assert_eq!(r.fm_micro, 0.7);
        let precision = (6.0 / 9.0 + 8.0 / 11.0) / 2.0;
        let recall = (0.6 + 0.8) / 2.0;
        let expected = 2.0 * precision * recall / (precision + recall);
        assert!((r.osfm_macro - expected).abs() < 1e-15);
    }

    #[test]
    fn degenerate_populations() {
        let cm = confusion(&[K(0), K(1), U, U], &[U, U, U, U], 2).unwrap();
        assert_eq!(aks(&cm), Some(0.0));
        assert_eq!(aus(&cm), Some(1.0));
        assert_eq!(na(&cm, false).unwrap(), 0.5);

        let cm = confusion(&[K(0), U], &[K(0), K(1)], 2).unwrap();
        assert_eq!(dus(&cm), Some(0.0));

        let cm = confusion(&[K(0), K(1)], &[K(0), K(1)], 2).unwrap();
        assert!(na(&cm, false).is_err());
        assert_eq!(na(&cm, true).unwrap(), 1.0);

        assert!(full_report(&[], &[], 2, false).is_err());
        assert!(full_report(&[], &[], 2, true).is_err());

        let cm = confusion(&[U, U], &[U, U], 2).unwrap();
        assert_eq!(fm_micro(&cm), 1.0);
        assert_eq!(osfm_micro(&cm), 0.0);
    }

    #[test]
    fn perfect_and_hopeless() {
        let t = [K(0), K(1), K(2), U];
        let r = full_report(&t, &t, 3, false).unwrap();
        for v in [
            r.na,
            r.da,
            r.osfm_macro,
            r.osfm_micro,
            r.fm_macro,
            r.fm_micro,
        ] {
            assert_eq!(v, 1.0);
        }
        let wrong = [K(1), K(2), K(0), K(0)];
        let r = full_report(&t, &wrong, 3, false).unwrap();
        assert_eq!(r.osfm_macro, 0.0);
        assert_eq!(r.osfm_micro, 0.0);
    }

    fn labels(n: usize) -> impl Strategy<Value = Label> {
        prop_oneof![(0..n).prop_map(Label::Known), Just(Label::Unknown),]
    }

    fn pairs() -> impl Strategy<Value = (usize, Vec<(Label, Label)>)> {
        (1usize..6).prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec((labels(n), labels(n)), 1..80),
            )
        })
    }

    proptest! {
        #[test]
        fn metrics_are_bounded_and_identities_hold((n, data) in pairs()) {
            let (t, p): (Vec<_>, Vec<_>) = data.into_iter().unzip();
            let cm = confusion(&t, &p, n).unwrap();
            let r = MetricsReport::from_confusion(cm, true);
            prop_assume!(r.is_ok());
            let r = r.unwrap();
            for v in [r.na, r.da, r.osfm_macro, r.osfm_micro, r.fm_macro, r.fm_micro] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            // single-rounded from counts, so equal to the float mean up to an ulp
            if let (Some(a), Some(u)) = (r.aks, r.aus) {
                prop_assert!((r.na - (a + u) / 2.0).abs() <= 1e-15);
            }
            if let (Some(a), Some(u)) = (r.dks, r.dus) {
                prop_assert!((r.da - (a + u) / 2.0).abs() <= 1e-15);
            }
        }

        #[test]
        fn known_class_permutation_is_invisible((n, data) in pairs(), rot in 0usize..6) {
            let (t, p): (Vec<_>, Vec<_>) = data.into_iter().unzip();
            let perm = |l: Label| match l {
                Label::Known(i) => Label::Known((i + rot) % n),
                u => u,
            };
            let a = confusion(&t, &p, n).unwrap();
            let tp: Vec<_> = t.iter().copied().map(perm).collect();
            let pp: Vec<_> = p.iter().copied().map(perm).collect();
            let b = confusion(&tp, &pp, n).unwrap();
            prop_assert_eq!(aks(&a), aks(&b));
            prop_assert_eq!(dks(&a), dks(&b));
            prop_assert!((osfm_macro(&a) - osfm_macro(&b)).abs() < 1e-12);
            prop_assert!((fm_macro(&a) - fm_macro(&b)).abs() < 1e-12);
            prop_assert_eq!(osfm_micro(&a), osfm_micro(&b));
            prop_assert_eq!(fm_micro(&a), fm_micro(&b));
        }

        #[test]
        fn closed_set_reduces_to_accuracy(n in 1usize..6, data in prop::collection::vec((0usize..5, 0usize..5), 1..60)) {
            let t: Vec<Label> = data.iter().map(|&(a, _)| Label::Known(a % n)).collect();
            let p: Vec<Label> = data.iter().map(|&(_, b)| Label::Known(b % n)).collect();
            let cm = confusion(&t, &p, n).unwrap();
            let acc = accuracy(&cm).unwrap();
            prop_assert!((aks(&cm).unwrap() - acc).abs() < 1e-12);
            prop_assert!((fm_micro(&cm) - acc).abs() < 1e-12);
        }
    }
}
