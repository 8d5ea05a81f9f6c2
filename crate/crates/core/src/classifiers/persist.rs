//! Model files: a JSON header plus every numeric array as little-endian
//! `f64` bytes in one base64 block. The header lists each array's name and
//! length in storage order.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::forest::Forest;
use super::ncm::Ncm;
use super::osnn::Osnn;
use super::softmax::Softmax;
use super::svm_family::{Occ, Ova, Pisvm, Psvm, TwoStage};
use super::{ClassifierSpec, Fitted, Rejection, TrainedModel, Variant};
use crate::data::ClassRegistry;
use crate::error::{Error, Result};
use crate::numerics::{
    BinarySvm, EnclosingBall, KernelSpec, LogisticModel, PlattScaling, Standardizer, WeibullParams,
};

pub const MODEL_FORMAT: &str = "osbench_model_v1";

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    variant: Variant,
    hyperparams: BTreeMap<String, f64>,
    kernel: KernelSpec,
    seed: u64,
    feature_dim: usize,
    classes: Vec<String>,
    arrays: Vec<ArrayEntry>,
    data: String,
}

#[derive(Default)]
struct Writer {
    entries: Vec<(String, Vec<f64>)>,
}

impl Writer {
    fn put(&mut self, name: impl Into<String>, values: impl IntoIterator<Item = f64>) {
        self.entries
            .push((name.into(), values.into_iter().collect()));
    }

    fn put_rows(&mut self, name: impl Into<String>, rows: &[Vec<f64>]) {
        self.put(name, rows.iter().flatten().copied());
    }

    fn put_indices(&mut self, name: impl Into<String>, values: &[usize]) {
        self.put(name, values.iter().map(|&v| v as f64));
    }

    fn put_svm(&mut self, prefix: &str, m: &BinarySvm) {
        self.put_rows(format!("{prefix}.support"), &m.support);
        self.put(format!("{prefix}.coef"), m.coef.iter().copied());
        self.put(format!("{prefix}.bias"), [m.bias]);
    }

    fn put_ball(&mut self, prefix: &str, b: &EnclosingBall) {
        self.put_rows(format!("{prefix}.support"), &b.support);
        self.put(format!("{prefix}.alpha"), b.alpha.iter().copied());
        self.put(format!("{prefix}.geometry"), [b.center_norm2, b.radius]);
    }

    fn put_ova(&mut self, ova: &Ova) {
        for (i, m) in ova.machines.iter().enumerate() {
            self.put_svm(&format!("svm{i}"), m);
        }
    }

    fn put_psvm(&mut self, p: &Psvm) {
        self.put_ova(&p.ova);
        self.put("platt", p.platt.iter().flat_map(|s| [s.a, s.b]));
    }
}

struct Reader {
    entries: VecDeque<(String, Vec<f64>)>,
    dim: usize,
    kernel: KernelSpec,
}

fn corrupt(message: impl Into<String>) -> Error {
    Error::format("model file", message)
}

impl Reader {
    fn take(&mut self, name: &str) -> Result<Vec<f64>> {
        match self.entries.pop_front() {
            Some((n, v)) if n == name => Ok(v),
            Some((n, _)) => Err(corrupt(format!("expected array `{name}`, found `{n}`"))),
            None => Err(corrupt(format!("missing array `{name}`"))),
        }
    }

    fn take_len(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        let v = self.take(name)?;
        if v.len() != len {
            return Err(corrupt(format!(
                "array `{name}` has {} values, expected {len}",
                v.len()
            )));
        }
        Ok(v)
    }

    fn take_rows(&mut self, name: &str) -> Result<Vec<Vec<f64>>> {
        let v = self.take(name)?;
        if self.dim == 0 || v.len() % self.dim != 0 {
            return Err(corrupt(format!(
                "array `{name}` is not a multiple of the feature dimension"
            )));
        }
        Ok(v.chunks(self.dim).map(<[f64]>::to_vec).collect())
    }

    fn take_indices(&mut self, name: &str, bound: usize) -> Result<Vec<usize>> {
        self.take(name)?
            .into_iter()
            .map(|v| {
                if v >= 0.0 && v.fract() == 0.0 && (v as usize) < bound {
                    Ok(v as usize)
                } else {
                    Err(corrupt(format!("array `{name}` holds invalid index {v}")))
                }
            })
            .collect()
    }

    fn take_svm(&mut self, prefix: &str) -> Result<BinarySvm> {
        let support = self.take_rows(&format!("{prefix}.support"))?;
        let coef = self.take_len(&format!("{prefix}.coef"), support.len())?;
        let bias = self.take_len(&format!("{prefix}.bias"), 1)?[0];
        Ok(BinarySvm {
            kernel: self.kernel,
            support,
            coef,
            bias,
        })
    }

    fn take_ball(&mut self, prefix: &str) -> Result<EnclosingBall> {
        let support = self.take_rows(&format!("{prefix}.support"))?;
        let alpha = self.take_len(&format!("{prefix}.alpha"), support.len())?;
        let g = self.take_len(&format!("{prefix}.geometry"), 2)?;
        Ok(EnclosingBall {
            kernel: self.kernel,
            support,
            alpha,
            center_norm2: g[0],
            radius: g[1],
        })
    }

    fn take_ova(&mut self, n: usize) -> Result<Ova> {
        let machines = (0..n)
            .map(|i| self.take_svm(&format!("svm{i}")))
            .collect::<Result<_>>()?;
        Ok(Ova { machines })
    }

    fn take_psvm(&mut self, n: usize) -> Result<Psvm> {
        let ova = self.take_ova(n)?;
        let platt = self
            .take_len("platt", 2 * n)?
            .chunks(2)
            .map(|c| PlattScaling { a: c[0], b: c[1] })
            .collect();
        Ok(Psvm { ova, platt })
    }
}

fn write_fitted(w: &mut Writer, fitted: &Fitted) {
    match fitted {
        Fitted::Osnn(m) => {
            w.put_rows("points", &m.points);
            w.put_indices("slots", &m.slots);
        }
        Fitted::Ova(m) => w.put_ova(m),
        Fitted::Psvm(m) => w.put_psvm(m),
        Fitted::Pisvm(m) => {
            w.put_ova(&m.ova);
            w.put(
                "weibull",
                m.weibull.iter().flat_map(|p| [p.shape, p.scale, p.shift]),
            );
        }
        Fitted::Softmax(m) => {
            w.put("weights", m.model.weights.iter().copied());
            w.put("bias", m.model.bias.iter().copied());
        }
        Fitted::Ncm(m) => w.put_rows("means", &m.means),
        Fitted::Et(f) => {
            w.put_indices("roots", &f.roots);
            w.put("feature", f.feature.iter().map(|&v| f64::from(v)));
            w.put("threshold", f.threshold.iter().copied());
            w.put_indices("left", &f.left);
            w.put_indices("right", &f.right);
            w.put("leaf_dist", f.leaf_dist.iter().copied());
        }
        Fitted::Occ(m) => {
            for (i, b) in m.balls.iter().enumerate() {
                w.put_ball(&format!("ball{i}"), b);
            }
        }
        Fitted::TwoStage(m) => {
            w.put_ball("gate", &m.gate);
            w.put_psvm(&m.psvm);
        }
    }
}

fn read_fitted(r: &mut Reader, variant: Variant, n: usize) -> Result<Fitted> {
    Ok(match variant {
        Variant::Osnn => {
            let points = r.take_rows("points")?;
            let slots = r.take_indices("slots", n)?;
            if slots.len() != points.len() || points.is_empty() {
                return Err(corrupt("OSNN points and slots disagree"));
            }
            Fitted::Osnn(Osnn {
                points,
                slots,
                n_slots: n,
            })
        }
        Variant::SvmOva => Fitted::Ova(r.take_ova(n)?),
        Variant::Psvm => Fitted::Psvm(r.take_psvm(n)?),
        Variant::Pisvm => {
            let ova = r.take_ova(n)?;
            let weibull = r
                .take_len("weibull", 3 * n)?
                .chunks(3)
                .map(|c| WeibullParams {
                    shape: c[0],
                    scale: c[1],
                    shift: c[2],
                })
                .collect();
            Fitted::Pisvm(Pisvm { ova, weibull })
        }
        Variant::Softmax => {
            let dim = r.dim;
            let weights = r.take_len("weights", n * dim)?;
            let bias = r.take_len("bias", n)?;
            Fitted::Softmax(Softmax {
                model: LogisticModel {
                    n_classes: n,
                    dim,
                    weights,
                    bias,
                },
            })
        }
        Variant::Ncm => {
            let means = r.take_rows("means")?;
            if means.len() != n {
                return Err(corrupt("NCM needs one mean per class"));
            }
            Fitted::Ncm(Ncm { means })
        }
        Variant::Et => {
            let roots_raw = r.take("roots")?;
            let feature_raw = r.take("feature")?;
            let nodes = feature_raw.len();
            let roots = roots_raw
                .iter()
                .map(|&v| index_value(v, nodes, "roots"))
                .collect::<Result<Vec<_>>>()?;
            let feature = feature_raw
                .iter()
                .map(|&v| {
                    if v == f64::from(super::forest::LEAF)
                        || (v >= 0.0 && v.fract() == 0.0 && (v as usize) < r.dim)
                    {
                        Ok(v as u32)
                    } else {
                        Err(corrupt(format!("invalid split feature {v}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let threshold = r.take_len("threshold", nodes)?;
            let left_raw = r.take_len("left", nodes)?;
            let right = r.take_indices("right", nodes.max(1))?;
            let leaf_dist = r.take("leaf_dist")?;
            let left = left_raw
                .iter()
                .zip(&feature)
                .map(|(&v, &f)| {
                    if f == super::forest::LEAF {
                        index_value(v, (leaf_dist.len() + 1).saturating_sub(n), "left")
                    } else {
                        index_value(v, nodes, "left")
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            if right.len() != nodes || roots.is_empty() {
                return Err(corrupt("forest arrays disagree"));
            }
            Fitted::Et(Forest {
                n_classes: n,
                roots,
                feature,
                threshold,
                left,
                right,
                leaf_dist,
            })
        }
        Variant::OccPerClass => {
            let balls = (0..n)
                .map(|i| r.take_ball(&format!("ball{i}")))
                .collect::<Result<_>>()?;
            Fitted::Occ(Occ { balls })
        }
        Variant::TwoStage => {
            let gate = r.take_ball("gate")?;
            Fitted::TwoStage(TwoStage {
                gate,
                psvm: r.take_psvm(n)?,
            })
        }
        v => return Err(Error::UnimplementedVariant(v.name())),
    })
}

fn index_value(v: f64, bound: usize, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && (v as usize) < bound {
        Ok(v as usize)
    } else {
        Err(corrupt(format!("array `{what}` holds invalid index {v}")))
    }
}

impl TrainedModel {
    /// Serializes the model to its file representation.
    pub fn to_document(&self) -> String {
        let mut w = Writer::default();
        w.put("standardizer.mean", self.standardizer.mean.iter().copied());
        w.put(
            "standardizer.scale",
            self.standardizer.scale.iter().copied(),
        );
        w.put("train_mean", self.train_mean.iter().copied());
        w.put_indices("classes", &self.classes);
        write_fitted(&mut w, &self.fitted);

        let mut bytes = Vec::new();
        let mut arrays = Vec::with_capacity(w.entries.len());
        for (name, values) in &w.entries {
            arrays.push(ArrayEntry {
                name: name.clone(),
                len: values.len(),
            });
            for v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            variant: self.spec.variant,
            hyperparams: self.spec.hyperparams.clone(),
            kernel: self.spec.kernel,
            seed: self.spec.seed,
            feature_dim: self.feature_dim,
            classes: self.registry.names().to_vec(),
            arrays,
            data: STANDARD.encode(bytes),
        };
        let mut out = serde_json::to_string_pretty(&file).expect("model header serializes");
        out.push('\n');
        out
    }

    pub fn from_document(text: &str) -> Result<TrainedModel> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(corrupt(format!("unsupported format `{}`", file.format)));
        }
        let bytes = STANDARD
            .decode(file.data.as_bytes())
            .map_err(|e| corrupt(e.to_string()))?;
        let total: usize = file.arrays.iter().map(|a| a.len).sum();
        if bytes.len() != total * 8 {
            return Err(corrupt(format!(
                "data block holds {} bytes, header declares {}",
                bytes.len(),
                total * 8
            )));
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let entries = file
            .arrays
            .iter()
            .map(|a| (a.name.clone(), values.by_ref().take(a.len).collect()))
            .collect();

        let spec = ClassifierSpec {
            variant: file.variant,
            hyperparams: file.hyperparams,
            kernel: file.kernel,
            seed: file.seed,
        };
        let rejection = Rejection::for_spec(&spec)?;
        let registry = ClassRegistry::new(file.classes)?;
        let dim = file.feature_dim;
        let mut r = Reader {
            entries,
            dim,
            kernel: spec.effective_kernel(),
        };
        let standardizer = Standardizer {
            mean: r.take_len("standardizer.mean", dim)?,
            scale: r.take_len("standardizer.scale", dim)?,
        };
        let train_mean = r.take_len("train_mean", dim)?;
        let classes = r.take_indices("classes", registry.len())?;
        if classes.is_empty() || classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(corrupt("class slots must be ascending and nonempty"));
        }
        let fitted = read_fitted(&mut r, spec.variant, classes.len())?;
        if let Some((name, _)) = r.entries.front() {
            return Err(corrupt(format!("unexpected trailing array `{name}`")));
        }
        Ok(TrainedModel {
            spec,
            registry,
            classes,
            standardizer,
            train_mean,
            feature_dim: dim,
            rejection,
            fitted,
        })
    }
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    fs::write(path, model.to_document()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TrainedModel::from_document(&text).map_err(|e| match e {
        Error::Format { message, .. } => Error::format(path.display().to_string(), message),
        other => other,
    })
}
