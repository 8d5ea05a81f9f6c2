//! Known-versus-unknown detection by a dedicated two-class model.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fit, ClassifierSpec, TrainedModel, Variant};
use crate::data::{ClassRegistry, Dataset, Label, Sample};
use crate::error::{Error, Result};
use crate::protocols::SplitPlan;

/// Super-class names inside the detector's own registry.
pub const KNOWN_SIDE: &str = "known";
pub const NOVEL_SIDE: &str = "novel";

const DETECTOR_FORMAT: &str = "osbench_detector_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Psvm,
    Et,
}

impl DetectorKind {
    pub fn variant(self) -> Variant {
        match self {
            DetectorKind::Psvm => Variant::Psvm,
            DetectorKind::Et => Variant::Et,
        }
    }
}

/// A PSVM or ET trained on two super-classes: every known sample against
/// every known-unknown sample. Remembers the known classes it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDetector {
    known: ClassRegistry,
    model: TrainedModel,
}

#[derive(Serialize, Deserialize)]
struct DetectorFile {
    format: String,
    known_classes: Vec<String>,
    model: String,
}

impl BinaryDetector {
    /// Known side = `plan.fit`; unknown side = the unknown-labeled part of
    /// `plan.validation`.
    pub fn fit_plan(spec: &ClassifierSpec, plan: &SplitPlan) -> Result<Self> {
        let ku = plan.validation.filter(|s| s.label == Label::Unknown);
        let mut det = Self::fit(spec, &plan.fit, &ku)?;
        det.known = plan.final_train.registry().clone();
        Ok(det)
    }

    pub fn fit(spec: &ClassifierSpec, known: &Dataset, known_unknown: &Dataset) -> Result<Self> {
        if !matches!(spec.variant, Variant::Psvm | Variant::Et) {
            return Err(Error::InvalidInput(format!(
                "binary detector must be PSVM or ET, got {}",
                spec.variant
            )));
        }
        if known_unknown.is_empty() {
            return Err(Error::Degenerate(
                "binary detector needs known-unknown samples".into(),
            ));
        }
        if known.is_empty() {
            return Err(Error::Degenerate(
                "binary detector needs known samples".into(),
            ));
        }
        let registry = ClassRegistry::new([KNOWN_SIDE, NOVEL_SIDE])?;
        let (k, n) = (
            registry.id(KNOWN_SIDE).unwrap_or(0),
            registry.id(NOVEL_SIDE).unwrap_or(1),
        );
        let side = |s: &Sample, label: usize, tag: &str| Sample {
            features: s.features.clone(),
            label: Label::Known(label),
            image_id: format!("{tag}/{}", s.image_id),
            patch_index: s.patch_index,
        };
        let samples = known
            .samples()
            .iter()
            .map(|s| side(s, k, KNOWN_SIDE))
            .chain(
                known_unknown
                    .samples()
                    .iter()
                    .map(|s| side(s, n, NOVEL_SIDE)),
            )
            .collect();
        let data = Dataset::new(samples, registry, known.feature_dim())?;
        Ok(Self {
            known: known.registry().clone(),
            model: fit(spec, &data)?,
        })
    }

    pub fn known_classes(&self) -> &ClassRegistry {
        &self.known
    }

    pub fn model(&self) -> &TrainedModel {
        &self.model
    }

    /// True when `f` is judged to come from a known class. Rejection by the
    /// underlying model counts as unknown.
    pub fn detect(&self, f: &[f64]) -> Result<bool> {
        let label = self.model.predict(f)?;
        Ok(label
            .class_id()
            .and_then(|id| self.model.registry().name(id))
            == Some(KNOWN_SIDE))
    }

    pub fn to_document(&self) -> String {
        let file = DetectorFile {
            format: DETECTOR_FORMAT.to_string(),
            known_classes: self.known.names().to_vec(),
            model: self.model.to_document(),
        };
        let mut out = serde_json::to_string_pretty(&file).expect("detector header serializes");
        out.push('\n');
        out
    }

    pub fn from_document(text: &str) -> Result<Self> {
        let file: DetectorFile = serde_json::from_str(text)
            .map_err(|e| Error::format("detector file", e.to_string()))?;
        if file.format != DETECTOR_FORMAT {
            return Err(Error::format(
                "detector file",
                format!("unsupported format `{}`", file.format),
            ));
        }
        Ok(Self {
            known: ClassRegistry::new(file.known_classes)?,
            model: TrainedModel::from_document(&file.model)?,
        })
    }

    /// True if `text` looks like a detector file rather than a model file.
    pub fn is_detector_document(text: &str) -> bool {
        text.contains(DETECTOR_FORMAT)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_document()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_document(&text)
    }
}
