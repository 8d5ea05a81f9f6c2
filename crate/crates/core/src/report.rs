//! Evaluation of trained models on a test set and the report document.
//!
//! Every evaluation is scored twice: per patch, and per image after a
//! plurality vote over the image's patches. With several models the patch
//! decisions are fused by ensemble vote; at image level each model votes on
//! the image first and the ensemble then fuses those image decisions.
//!
//! The report is TOML with a fixed key order:
//!
//! ```toml
//! schema = "osbench_report_v1"
//! mode = "classify"
//! granularity = "image"
//! models = ["psvm.model"]
//! test_manifest = "test.manifest"
//! classes = ["cam_a", "cam_b"]
//!
//! [patch]
//! samples = 120
//! na = 0.91
//! # … remaining metrics, absent ones omitted
//! confusion = [[…], …]   # row = truth, column = prediction, unknown last
//!
//! [image]
//! # same keys
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifiers::{load_model, BinaryDetector, TrainedModel};
use crate::data::{ClassRegistry, Dataset, Label, UNKNOWN_NAME};
use crate::error::{Error, Result};
use crate::fusion::{ensemble_vote, image_vote, DumpRow};
use crate::metrics::{confusion, MetricsReport};

pub const REPORT_SCHEMA: &str = "osbench_report_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Granularity {
    Patch,
    #[default]
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Name the class or reject as unknown.
    #[default]
    Classify,
    /// Only decide known versus unknown.
    Detect,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(Error::InvalidInput(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name,)+ })
            }
        }
    };
}

keyword_enum!(Granularity, "granularity", Granularity::Patch => "patch", Granularity::Image => "image");
keyword_enum!(Mode, "mode", Mode::Classify => "classify", Mode::Detect => "detect");

/// A loaded model file: a classifier or a binary detector.
#[derive(Debug, Clone, PartialEq)]
pub enum Evaluator {
    Model(TrainedModel),
    Detector(BinaryDetector),
}

impl Evaluator {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if BinaryDetector::is_detector_document(&text) {
            Ok(Evaluator::Detector(BinaryDetector::from_document(&text)?))
        } else {
            drop(text);
            Ok(Evaluator::Model(load_model(path)?))
        }
    }

    /// Classes the evaluator treats as known.
    pub fn known_classes(&self) -> &ClassRegistry {
        match self {
            Evaluator::Model(m) => m.registry(),
            Evaluator::Detector(d) => d.known_classes(),
        }
    }

    pub fn predict(&self, f: &[f64]) -> Result<Label> {
        match self {
            Evaluator::Model(m) => m.predict(f),
            Evaluator::Detector(_) => Err(Error::InvalidInput(
                "a binary detector cannot classify; evaluate it in detect mode".into(),
            )),
        }
    }

    pub fn detect(&self, f: &[f64]) -> Result<bool> {
        match self {
            Evaluator::Model(m) => m.detect(f),
            Evaluator::Detector(d) => d.detect(f),
        }
    }
}

/// Truths and fused predictions at one granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub keys: Vec<String>,
    pub truths: Vec<Label>,
    pub predictions: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mode: Mode,
    /// Label space of the truths and predictions; in detect mode a single
    /// `known` class.
    pub classes: ClassRegistry,
    pub patch: Level,
    pub image: Level,
}

impl Evaluation {
    pub fn level(&self, granularity: Granularity) -> &Level {
        match granularity {
            Granularity::Patch => &self.patch,
            Granularity::Image => &self.image,
        }
    }

    pub fn metrics(&self, granularity: Granularity, allow_partial: bool) -> Result<MetricsReport> {
        let level = self.level(granularity);
        MetricsReport::from_confusion(
            confusion(&level.truths, &level.predictions, self.classes.len())?,
            allow_partial,
        )
    }

    /// Prediction dump rows with labels by class name.
    pub fn dump(&self, granularity: Granularity) -> Result<Vec<DumpRow>> {
        let level = self.level(granularity);
        level
            .keys
            .iter()
            .zip(level.truths.iter().zip(&level.predictions))
            .map(|(key, (&t, &p))| {
                Ok(DumpRow {
                    key: key.clone(),
                    truth: self.classes.label_name(t)?.to_string(),
                    prediction: self.classes.label_name(p)?.to_string(),
                })
            })
            .collect()
    }
}

/// Runs every evaluator over `test`. Test labels are matched to the
/// evaluators' classes by name; classes they do not know count as unknown.
pub fn evaluate(evaluators: &[Evaluator], test: &Dataset, mode: Mode) -> Result<Evaluation> {
    let first = evaluators
        .first()
        .ok_or_else(|| Error::InvalidInput("no models to evaluate".into()))?;
    if test.is_empty() {
        return Err(Error::InvalidInput("test set is empty".into()));
    }
    let known = first.known_classes();
    if evaluators.iter().any(|e| e.known_classes() != known) {
        return Err(Error::InvalidInput(
            "models were trained on different known classes".into(),
        ));
    }
    let test = test.align_to(known);

    let classes = match mode {
        Mode::Classify => known.clone(),
        Mode::Detect => ClassRegistry::new(["known"])?,
    };
    let collapse = |l: Label| match (mode, l) {
        (Mode::Detect, Label::Known(_)) => Label::Known(0),
        _ => l,
    };
    let per_model: Vec<Vec<Label>> = evaluators
        .iter()
        .map(|e| {
            test.samples()
                .iter()
                .map(|s| match mode {
                    Mode::Classify => e.predict(&s.features),
                    Mode::Detect => Ok(if e.detect(&s.features)? {
                        Label::Known(0)
                    } else {
                        Label::Unknown
                    }),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let fuse = |votes: &[Label]| -> Result<Label> {
        if votes.len() == 1 {
            Ok(votes[0])
        } else {
            ensemble_vote(votes)
        }
    };

    let samples = test.samples();
    let mut patch = Level {
        keys: Vec::with_capacity(samples.len()),
        truths: Vec::with_capacity(samples.len()),
        predictions: Vec::with_capacity(samples.len()),
    };
    for (i, s) in samples.iter().enumerate() {
        let votes: Vec<Label> = per_model.iter().map(|p| p[i]).collect();
        patch.keys.push(format!("{}#{}", s.image_id, s.patch_index));
        patch.truths.push(collapse(s.label));
        patch.predictions.push(fuse(&votes)?);
    }

    // sample positions per image, in image id order
    let mut images: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for (i, s) in samples.iter().enumerate() {
        images.entry(s.image_id.as_str()).or_default().push(i);
    }
    let mut image = Level {
        keys: Vec::with_capacity(images.len()),
        truths: Vec::with_capacity(images.len()),
        predictions: Vec::with_capacity(images.len()),
    };
    for (id, rows) in images {
        let truth = samples[rows[0]].label;
        if rows.iter().any(|&r| samples[r].label != truth) {
            return Err(Error::InvalidInput(format!(
                "image `{id}` has patches of different classes"
            )));
        }
        let votes = per_model
            .iter()
            .map(|p| image_vote(&rows.iter().map(|&r| p[r]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        image.keys.push(id.to_string());
        image.truths.push(collapse(truth));
        image.predictions.push(fuse(&votes)?);
    }

    Ok(Evaluation {
        mode,
        classes,
        patch,
        image,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSection {
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aks: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aus: Option<f64>,
    pub na: f64,
    pub da: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dks: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dus: Option<f64>,
    pub osfm_macro: f64,
    pub osfm_micro: f64,
    pub fm_macro: f64,
    pub fm_micro: f64,
    pub confusion: Vec<Vec<u64>>,
}

impl LevelSection {
    pub fn new(samples: usize, m: &MetricsReport) -> Self {
        let width = m.confusion.n() + 1;
        Self {
            samples,
            aks: m.aks,
            aus: m.aus,
            na: m.na,
            da: m.da,
            dks: m.dks,
            dus: m.dus,
            osfm_macro: m.osfm_macro,
            osfm_micro: m.osfm_micro,
            fm_macro: m.fm_macro,
            fm_micro: m.fm_micro,
            confusion: m
                .confusion
                .counts()
                .chunks(width)
                .map(<[u64]>::to_vec)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub mode: String,
    /// Granularity the caller asked for; both are always reported.
    pub granularity: String,
    pub models: Vec<String>,
    pub test_manifest: String,
    pub classes: Vec<String>,
    pub patch: LevelSection,
    pub image: LevelSection,
}

impl Report {
    pub fn build(
        evaluation: &Evaluation,
        granularity: Granularity,
        models: &[String],
        test_manifest: &str,
        allow_partial: bool,
    ) -> Result<Self> {
        let section = |g: Granularity| -> Result<LevelSection> {
            Ok(LevelSection::new(
                evaluation.level(g).keys.len(),
                &evaluation.metrics(g, allow_partial)?,
            ))
        };
        let mut classes = evaluation.classes.names().to_vec();
        classes.push(UNKNOWN_NAME.to_string());
        Ok(Self {
            schema: REPORT_SCHEMA.to_string(),
            mode: evaluation.mode.to_string(),
            granularity: granularity.to_string(),
            models: models.to_vec(),
            test_manifest: test_manifest.to_string(),
            classes,
            patch: section(Granularity::Patch)?,
            image: section(Granularity::Image)?,
        })
    }

    pub fn section(&self, granularity: Granularity) -> &LevelSection {
        match granularity {
            Granularity::Patch => &self.patch,
            Granularity::Image => &self.image,
        }
    }

    pub fn to_document(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("report", e.to_string()))
    }

    pub fn from_document(text: &str) -> Result<Self> {
        let report: Report =
            toml::from_str(text).map_err(|e| Error::format("report", e.to_string()))?;
        if report.schema != REPORT_SCHEMA {
            return Err(Error::format(
                "report",
                format!("unsupported schema `{}`", report.schema),
            ));
        }
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_document()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{fit, ClassifierSpec, Variant};
    use crate::data::Sample;

    fn data(points: &[(&str, u32, &str, f64)], names: &[&str]) -> Dataset {
        let reg = ClassRegistry::new(names.iter().copied()).unwrap();
        let samples = points
            .iter()
            .map(|&(img, p, class, x)| Sample {
                features: vec![x, 0.0],
                label: reg.parse_label(class).unwrap(),
                image_id: img.into(),
                patch_index: p,
            })
            .collect();
        Dataset::new(samples, reg, 2).unwrap()
    }

    fn model() -> TrainedModel {
        let mut pts = Vec::new();
        for i in 0..6 {
            let dx = f64::from(i) * 0.1;
            pts.push((["a0", "a1", "a2"][i as usize % 3], i, "a", dx));
            pts.push((["b0", "b1", "b2"][i as usize % 3], i, "b", 10.0 + dx));
        }
        let train = data(&pts, &["a", "b"]);
        fit(&ClassifierSpec::new(Variant::Osnn).with("T", 0.5), &train).unwrap()
    }

    fn test_set() -> Dataset {
        data(
            &[
                ("t/a", 0, "a", 0.2),
                ("t/a", 1, "a", 0.3),
                ("t/a", 2, "a", 100.0),
                ("t/b", 0, "b", 10.2),
                ("t/z", 0, "z", 200.0),
                ("t/z", 1, "z", 0.25),
            ],
            &["a", "b", "z"],
        )
    }

    #[test]
    fn patch_and_image_levels() {
        let m = Evaluator::Model(model());
        let ev = evaluate(&[m], &test_set(), Mode::Classify).unwrap();
        let (a, b) = (Label::Known(0), Label::Known(1));
        assert_eq!(
            ev.patch.truths,
            vec![a, a, a, b, Label::Unknown, Label::Unknown]
        );
        assert_eq!(
            ev.patch.predictions,
            vec![a, a, Label::Unknown, b, Label::Unknown, a]
        );
        assert_eq!(ev.image.keys, vec!["t/a", "t/b", "t/z"]);
        // t/z ties between a and unknown, which rejects
        assert_eq!(ev.image.predictions, vec![a, b, Label::Unknown]);
        let image = ev.metrics(Granularity::Image, false).unwrap();
        assert_eq!(
            (image.aks, image.aus, image.na),
            (Some(1.0), Some(1.0), 1.0)
        );
        let dump = ev.dump(Granularity::Patch).unwrap();
        assert_eq!(dump[5].key, "t/z#1");
        assert_eq!(
            (dump[5].truth.as_str(), dump[5].prediction.as_str()),
            ("unknown", "a")
        );
    }

    #[test]
    fn detect_mode_and_ensembles() {
        let m = model();
        let ev = evaluate(&[Evaluator::Model(m.clone())], &test_set(), Mode::Detect).unwrap();
        assert_eq!(ev.classes.len(), 1);
        let k = Label::Known(0);
        assert_eq!(
            ev.patch.predictions,
            vec![k, k, Label::Unknown, k, Label::Unknown, k]
        );

        let loose = Evaluator::Model(m.with_threshold(0.999).unwrap());
        let strict = Evaluator::Model(m.with_threshold(0.001).unwrap());
        let three = [loose.clone(), strict.clone(), strict];
        let one = evaluate(&three[1..2], &test_set(), Mode::Classify).unwrap();
        let fused = evaluate(&three, &test_set(), Mode::Classify).unwrap();
        assert_eq!(fused.patch.predictions, one.patch.predictions);
        let copies =
            evaluate(&[loose.clone(), loose.clone()], &test_set(), Mode::Classify).unwrap();
        assert_eq!(
            copies,
            evaluate(&[loose], &test_set(), Mode::Classify).unwrap()
        );
    }

    #[test]
    fn report_document_round_trips() {
        let ev = evaluate(&[Evaluator::Model(model())], &test_set(), Mode::Classify).unwrap();
        let r = Report::build(
            &ev,
            Granularity::Image,
            &["m.model".into()],
            "test.manifest",
            false,
        )
        .unwrap();
        let text = r.to_document().unwrap();
        assert!(text.starts_with("schema = \"osbench_report_v1\"\n"));
        assert!(text.contains("[image]"));
        assert_eq!(Report::from_document(&text).unwrap(), r);
        assert_eq!(
            r.image.confusion,
            vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]
        );
        assert_eq!(r.classes, vec!["a", "b", "unknown"]);
        assert!(Report::from_document(&text.replace("osbench_report_v1", "other")).is_err());
    }

    #[test]
    fn mismatched_inputs() {
        assert!(evaluate(&[], &test_set(), Mode::Classify).is_err());
        let mut mixed = test_set().samples().to_vec();
        mixed[1].label = Label::Known(1);
        let reg = test_set().registry().clone();
        let bad = Dataset::new(mixed, reg, 2).unwrap();
        assert!(evaluate(&[Evaluator::Model(model())], &bad, Mode::Classify).is_err());
        assert!("IMAGE".parse::<Granularity>().is_ok());
        assert!("pixels".parse::<Granularity>().is_err());
        assert_eq!(Mode::Detect.to_string(), "detect");
    }
}
