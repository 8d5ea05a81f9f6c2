//! Open-set classifiers behind one fit / score / predict interface.
//!
//! Every fitted model produces one score per trained class. Prediction takes
//! the arg-max slot (lowest slot on ties) and accepts it only if the variant's
//! rejection rule passes; otherwise the query is unknown. Keeping prediction a
//! pure function of the score vector lets thresholds be changed after fitting
//! with [`TrainedModel::with_threshold`].
//!
//! | variant        | required keys        | optional keys (default)          | accepts when        |
//! |----------------|----------------------|----------------------------------|---------------------|
//! | `OSNN`         | `T`                  |                                  | `1 − ratio ≥ 1 − T` |
//! | `SVM_OVA`      | `C`                  | `gamma`                          | max score `> 0`     |
//! | `PSVM`         | `C`, `tau`           | `gamma`                          | max posterior `≥ τ` |
//! | `SOFTMAX`      | `l2`, `lr`, `epochs`, `tau` |                           | max probability `≥ τ` |
//! | `NCM`          | `tau`                |                                  | max score `≥ τ`     |
//! | `ET`           | `tau`                | `M` (100), `K` (⌈√d⌉), `min_leaf` (1) | max probability `≥ τ` |
//! | `OCC_PERCLASS` | `nu`                 | `gamma`                          | max score `≥ 0`     |
//! | `TWO_STAGE`    | `nu`, `C`, `tau`     | `gamma`                          | max posterior `≥ τ` |
//! | `PISVM`        | `C`, `delta`         | `gamma`, `tail_fraction` (0.5)   | max posterior `≥ δ` |
//!
//! A `gamma` key switches the kernel to RBF with that width. `W_SVM`, `DBC`
//! and `SSVM` are registered names whose fit always fails.

mod detector;
mod forest;
mod grid;
mod ncm;
mod osnn;
mod persist;
mod softmax;
mod svm_family;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{ClassRegistry, Dataset, Label};
use crate::error::{Error, Result};
use crate::numerics::{KernelSpec, Standardizer};

pub use detector::{BinaryDetector, DetectorKind, KNOWN_SIDE, NOVEL_SIDE};
pub use grid::{export_decision_grid, write_decision_grid, GridBounds, GridCell};
pub use persist::{load_model, save_model, MODEL_FORMAT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "OSNN")]
    Osnn,
    #[serde(rename = "SVM_OVA")]
    SvmOva,
    #[serde(rename = "PSVM")]
    Psvm,
    #[serde(rename = "SOFTMAX")]
    Softmax,
    #[serde(rename = "NCM")]
    Ncm,
    #[serde(rename = "ET")]
    Et,
    #[serde(rename = "OCC_PERCLASS")]
    OccPerClass,
    #[serde(rename = "TWO_STAGE")]
    TwoStage,
    #[serde(rename = "PISVM")]
    Pisvm,
    #[serde(rename = "W_SVM")]
    Wsvm,
    #[serde(rename = "DBC")]
    Dbc,
    #[serde(rename = "SSVM")]
    Ssvm,
}

impl Variant {
    pub const ALL: [Variant; 12] = [
        Variant::Osnn,
        Variant::SvmOva,
        Variant::Psvm,
        Variant::Softmax,
        Variant::Ncm,
        Variant::Et,
        Variant::OccPerClass,
        Variant::TwoStage,
        Variant::Pisvm,
        Variant::Wsvm,
        Variant::Dbc,
        Variant::Ssvm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Osnn => "OSNN",
            Variant::SvmOva => "SVM_OVA",
            Variant::Psvm => "PSVM",
            Variant::Softmax => "SOFTMAX",
            Variant::Ncm => "NCM",
            Variant::Et => "ET",
            Variant::OccPerClass => "OCC_PERCLASS",
            Variant::TwoStage => "TWO_STAGE",
            Variant::Pisvm => "PISVM",
            Variant::Wsvm => "W_SVM",
            Variant::Dbc => "DBC",
            Variant::Ssvm => "SSVM",
        }
    }

    pub fn is_implemented(self) -> bool {
        !matches!(self, Variant::Wsvm | Variant::Dbc | Variant::Ssvm)
    }

    /// Hyperparameter that only moves the rejection threshold, if any.
    pub fn threshold_key(self) -> Option<&'static str> {
        match self {
            Variant::Osnn => Some("T"),
            Variant::Psvm | Variant::Softmax | Variant::Ncm | Variant::Et | Variant::TwoStage => {
                Some("tau")
            }
            Variant::Pisvm => Some("delta"),
            _ => None,
        }
    }

    pub fn uses_kernel(self) -> bool {
        matches!(
            self,
            Variant::SvmOva
                | Variant::Psvm
                | Variant::OccPerClass
                | Variant::TwoStage
                | Variant::Pisvm
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        let alias = match norm.as_str() {
            "WSVM" => "W_SVM",
            "P_SVM" => "PSVM",
            "PI_SVM" => "PISVM",
            "OCC" => "OCC_PERCLASS",
            "2P_SVM" => "TWO_STAGE",
            other => other,
        };
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == alias)
            .ok_or_else(|| Error::InvalidInput(format!("unknown classifier variant `{s}`")))
    }
}

/// What to fit: a variant, its hyperparameters, a kernel and a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub variant: Variant,
    pub hyperparams: BTreeMap<String, f64>,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            hyperparams: BTreeMap::new(),
            kernel: KernelSpec::Linear,
            seed: 0,
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.hyperparams.insert(key.to_string(), value);
        self
    }

    pub fn with_kernel(mut self, kernel: KernelSpec) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The kernel actually used: RBF when a `gamma` hyperparameter is set.
    pub fn effective_kernel(&self) -> KernelSpec {
        match self.hyperparams.get("gamma") {
            Some(&gamma) => KernelSpec::Rbf { gamma },
            None => self.kernel,
        }
    }

    fn params(&self) -> Params<'_> {
        Params {
            variant: self.variant.name(),
            map: &self.hyperparams,
        }
    }
}

pub(crate) struct Params<'a> {
    variant: &'static str,
    map: &'a BTreeMap<String, f64>,
}

impl Params<'_> {
    pub(crate) fn required(&self, key: &'static str) -> Result<f64> {
        let v = *self.map.get(key).ok_or(Error::MissingHyperparameter {
            variant: self.variant,
            key,
        })?;
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!(
                "{} `{key}` must be finite",
                self.variant
            )));
        }
        Ok(v)
    }

    pub(crate) fn optional(&self, key: &'static str, default: f64) -> Result<f64> {
        match self.map.get(key) {
            Some(_) => self.required(key),
            None => Ok(default),
        }
    }

    pub(crate) fn in_range(&self, key: &'static str, v: f64, ok: bool, range: &str) -> Result<f64> {
        if ok {
            Ok(v)
        } else {
            Err(Error::InvalidInput(format!(
                "{} `{key}` must be {range}, got {v}",
                self.variant
            )))
        }
    }

    pub(crate) fn positive(&self, key: &'static str) -> Result<f64> {
        let v = self.required(key)?;
        self.in_range(key, v, v > 0.0, "positive")
    }

    pub(crate) fn unit(&self, key: &'static str) -> Result<f64> {
        let v = self.required(key)?;
        self.in_range(key, v, (0.0..=1.0).contains(&v), "in [0, 1]")
    }

    pub(crate) fn count(&self, key: &'static str, default: Option<usize>) -> Result<usize> {
        let v = match default {
            Some(d) => self.optional(key, d as f64)?,
            None => self.required(key)?,
        };
        self.in_range(key, v, v >= 1.0 && v.fract() == 0.0, "a positive integer")?;
        Ok(v as usize)
    }
}

/// How a score vector turns into accept or reject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rejection {
    /// Accept when the winning score is `≥` the value.
    AtLeast(f64),
    /// Accept when the winning score is strictly `>` the value.
    Above(f64),
}

impl Rejection {
    pub fn accepts(self, score: f64) -> bool {
        match self {
            Rejection::AtLeast(t) => score >= t,
            Rejection::Above(t) => score > t,
        }
    }

    fn for_spec(spec: &ClassifierSpec) -> Result<Rejection> {
        let p = spec.params();
        Ok(match spec.variant {
            Variant::Osnn => {
                let t = p.required("T")?;
                p.in_range("T", t, t > 0.0 && t < 1.0, "in (0, 1)")?;
                Rejection::AtLeast(1.0 - t)
            }
            Variant::SvmOva => Rejection::Above(0.0),
            Variant::OccPerClass => Rejection::AtLeast(0.0),
            Variant::Psvm | Variant::Softmax | Variant::Ncm | Variant::Et | Variant::TwoStage => {
                Rejection::AtLeast(p.unit("tau")?)
            }
            Variant::Pisvm => Rejection::AtLeast(p.unit("delta")?),
            v => return Err(Error::UnimplementedVariant(v.name())),
        })
    }
}

/// Variant-specific fitted parameters, all in standardized feature space.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Fitted {
    Osnn(osnn::Osnn),
    Ova(svm_family::Ova),
    Psvm(svm_family::Psvm),
    Pisvm(svm_family::Pisvm),
    Softmax(softmax::Softmax),
    Ncm(ncm::Ncm),
    Et(forest::Forest),
    Occ(svm_family::Occ),
    TwoStage(svm_family::TwoStage),
}

impl Fitted {
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Fitted::Osnn(m) => m.scores(x),
            Fitted::Ova(m) => m.scores(x),
            Fitted::Psvm(m) => m.scores(x),
            Fitted::Pisvm(m) => m.scores(x),
            Fitted::Softmax(m) => m.scores(x),
            Fitted::Ncm(m) => m.scores(x),
            Fitted::Et(m) => m.scores(x),
            Fitted::Occ(m) => m.scores(x),
            Fitted::TwoStage(m) => m.scores(x),
        }
    }
}

/// Training data reduced to what every variant needs.
pub(crate) struct FitSet {
    /// Standardized feature rows.
    pub xs: Vec<Vec<f64>>,
    /// Slot index of each row.
    pub slots: Vec<usize>,
    pub n_slots: usize,
}

impl FitSet {
    pub fn rows(&self) -> Vec<&[f64]> {
        self.xs.iter().map(Vec::as_slice).collect()
    }

    pub fn rows_of(&self, slot: usize) -> Vec<&[f64]> {
        self.xs
            .iter()
            .zip(&self.slots)
            .filter(|(_, &s)| s == slot)
            .map(|(x, _)| x.as_slice())
            .collect()
    }
}

/// A fitted, immutable classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    spec: ClassifierSpec,
    registry: ClassRegistry,
    /// Class id held by each score slot, ascending.
    classes: Vec<usize>,
    standardizer: Standardizer,
    train_mean: Vec<f64>,
    feature_dim: usize,
    rejection: Rejection,
    fitted: Fitted,
}

/// Fits `spec` on every sample of `data`. Samples must all carry known labels.
pub fn fit(spec: &ClassifierSpec, data: &Dataset) -> Result<TrainedModel> {
    if !spec.variant.is_implemented() {
        return Err(Error::UnimplementedVariant(spec.variant.name()));
    }
    if data.is_empty() {
        return Err(Error::Degenerate("cannot fit on an empty dataset".into()));
    }
    if data.has_unknown() {
        return Err(Error::InvalidInput(
            "fit data contains unknown-labeled samples".into(),
        ));
    }
    let rejection = Rejection::for_spec(spec)?;
    spec.effective_kernel().validate()?;
    let classes = data.known_classes();
    let min_classes = if spec.variant == Variant::OccPerClass {
        1
    } else {
        2
    };
    if classes.len() < min_classes {
        return Err(Error::Degenerate(format!(
            "{} needs at least {min_classes} classes, found {}",
            spec.variant,
            classes.len()
        )));
    }
    let dim = data.feature_dim();
    let raw: Vec<&[f64]> = data
        .samples()
        .iter()
        .map(|s| s.features.as_slice())
        .collect();
    let train_mean = Standardizer::fit(raw.iter().copied(), dim).mean;
    let standardizer = if spec.variant == Variant::Et {
        Standardizer::identity(dim)
    } else {
        Standardizer::fit(raw.iter().copied(), dim)
    };
    let slot_of: BTreeMap<usize, usize> =
        classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let set = FitSet {
        xs: raw.iter().map(|x| standardizer.apply(x)).collect(),
        slots: data
            .samples()
            .iter()
            .map(|s| slot_of[&s.label.class_id().expect("known label")])
            .collect(),
        n_slots: classes.len(),
    };

    let p = spec.params();
    let kernel = spec.effective_kernel();
    let fitted = match spec.variant {
        Variant::Osnn => Fitted::Osnn(osnn::Osnn::fit(&set)),
        Variant::SvmOva => Fitted::Ova(svm_family::Ova::fit(&set, p.positive("C")?, kernel)?),
        Variant::Psvm => Fitted::Psvm(svm_family::Psvm::fit(
            &set,
            p.positive("C")?,
            kernel,
            spec.seed,
        )?),
        Variant::Pisvm => {
            let tail = p.optional("tail_fraction", svm_family::DEFAULT_TAIL_FRACTION)?;
            p.in_range(
                "tail_fraction",
                tail,
                tail > 0.0 && tail <= 1.0,
                "in (0, 1]",
            )?;
            Fitted::Pisvm(svm_family::Pisvm::fit(
                &set,
                p.positive("C")?,
                kernel,
                tail,
            )?)
        }
        Variant::Softmax => Fitted::Softmax(softmax::Softmax::fit(
            &set,
            p.required("l2")
                .and_then(|v| p.in_range("l2", v, v >= 0.0, "nonnegative"))?,
            p.positive("lr")?,
            p.count("epochs", None)?,
            spec.seed,
        )?),
        Variant::Ncm => Fitted::Ncm(ncm::Ncm::fit(&set)),
        Variant::Et => {
            let default_k = (dim as f64).sqrt().ceil().max(1.0) as usize;
            Fitted::Et(forest::Forest::fit(
                &set,
                forest::ForestConfig {
                    trees: p.count("M", Some(forest::DEFAULT_TREES))?,
                    candidates: p.count("K", Some(default_k))?,
                    min_leaf: p.count("min_leaf", Some(1))?,
                    seed: spec.seed,
                },
            ))
        }
        Variant::OccPerClass => Fitted::Occ(svm_family::Occ::fit(&set, nu(&p)?, kernel)?),
        Variant::TwoStage => Fitted::TwoStage(svm_family::TwoStage::fit(
            &set,
            nu(&p)?,
            p.positive("C")?,
            kernel,
            spec.seed,
        )?),
        Variant::Wsvm | Variant::Dbc | Variant::Ssvm => unreachable!("checked above"),
    };
    let mut spec = spec.clone();
    spec.kernel = kernel;
    Ok(TrainedModel {
        spec,
        registry: data.registry().clone(),
        classes,
        standardizer,
        train_mean,
        feature_dim: dim,
        rejection,
        fitted,
    })
}

fn nu(p: &Params<'_>) -> Result<f64> {
    let v = p.required("nu")?;
    p.in_range("nu", v, v > 0.0 && v <= 1.0, "in (0, 1]")
}

/// Arg-max slot; the lowest slot wins ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

impl TrainedModel {
    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.registry
    }

    /// Class id of each score slot.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn rejection(&self) -> Rejection {
        self.rejection
    }

    /// Mean of the raw training features.
    pub fn train_mean(&self) -> &[f64] {
        &self.train_mean
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    fn check_dim(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: f.len(),
            });
        }
        Ok(())
    }

    /// Pre-threshold score per trained class, in slot order.
    pub fn score(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(f)?;
        Ok(self.fitted.scores(&self.standardizer.apply(f)))
    }

    /// Applies the rejection rule to a score vector.
    pub fn decide(&self, scores: &[f64]) -> Label {
        match argmax(scores) {
            Some(i) if self.rejection.accepts(scores[i]) => Label::Known(self.classes[i]),
            _ => Label::Unknown,
        }
    }

    pub fn predict(&self, f: &[f64]) -> Result<Label> {
        Ok(self.decide(&self.score(f)?))
    }

    /// Known-versus-unknown view of [`predict`](Self::predict).
    pub fn detect(&self, f: &[f64]) -> Result<bool> {
        Ok(self.predict(f)?.is_known())
    }

    pub fn predict_all(&self, data: &Dataset) -> Result<Vec<Label>> {
        data.samples()
            .iter()
            .map(|s| self.predict(&s.features))
            .collect()
    }

    /// Copy with a different threshold (`T`, `tau` or `delta`); the fitted
    /// parameters are shared.
    pub fn with_threshold(&self, value: f64) -> Result<TrainedModel> {
        let key = self.spec.variant.threshold_key().ok_or_else(|| {
            Error::InvalidInput(format!(
                "{} has no threshold hyperparameter",
                self.spec.variant
            ))
        })?;
        let mut spec = self.spec.clone();
        spec.hyperparams.insert(key.to_string(), value);
        let rejection = Rejection::for_spec(&spec)?;
        Ok(TrainedModel {
            spec,
            rejection,
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests;
