//! Label space, samples, datasets and their on-disk manifests.
//!
//! A manifest is a small text document with a `key=value` header followed by
//! one record per patch:
//!
//! ```text
//! feature_file=train.osfv
//! format=osfv
//! dim=16
//! classes=cam_a,cam_b
//! img_0001,0,cam_a,0
//! img_0001,1,cam_a,1
//! ```
//!
//! `classes` is optional; without it the registry is the sorted set of class
//! names found in the records. The class name `unknown` is reserved for the
//! unknown label. Feature files are either `OSFV` binary (little-endian `u32`
//! dim, `u32` rows, then `f32` values row-major) or plain CSV, one row per
//! line.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Reserved class name for the unknown label in every file format.
pub const UNKNOWN_NAME: &str = "unknown";

const OSFV_MAGIC: &[u8; 4] = b"OSFV";

/// A known class identifier or the unknown label.
///
/// Ordering puts every known class before `Unknown`, known classes by id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Known(usize),
    Unknown,
}

impl Label {
    pub fn is_known(self) -> bool {
        matches!(self, Label::Known(_))
    }

    pub fn class_id(self) -> Option<usize> {
        match self {
            Label::Known(id) => Some(id),
            Label::Unknown => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Known(id) => write!(f, "K{id}"),
            Label::Unknown => f.write_str(UNKNOWN_NAME),
        }
    }
}

/// Sorted, duplicate-free class names; a class id is the position in the list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassRegistry {
    names: Vec<String>,
}

impl ClassRegistry {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        for name in &set {
            validate_class_name(name)?;
        }
        Ok(Self {
            names: set.into_iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains_id(&self, id: usize) -> bool {
        id < self.names.len()
    }

    /// Name used in files for `label`.
    pub fn label_name(&self, label: Label) -> Result<&str> {
        match label {
            Label::Unknown => Ok(UNKNOWN_NAME),
            Label::Known(id) => self
                .name(id)
                .ok_or_else(|| Error::UnknownClass(format!("id {id}"))),
        }
    }

    /// Parses a file label: the reserved unknown name or a registered class.
    pub fn parse_label(&self, name: &str) -> Result<Label> {
        if name == UNKNOWN_NAME {
            return Ok(Label::Unknown);
        }
        self.id(name)
            .map(Label::Known)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }
}

fn validate_class_name(name: &str) -> Result<()> {
    if name.is_empty() || name == UNKNOWN_NAME || name.contains([',', '\n', '\r']) {
        return Err(Error::InvalidInput(format!(
            "`{name}` cannot be used as a class name"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Label,
    pub image_id: String,
    pub patch_index: u32,
}

/// An ordered, validated collection of samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    registry: ClassRegistry,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, registry: ClassRegistry, feature_dim: usize) -> Result<Self> {
        let mut keys = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    actual: s.features.len(),
                });
            }
            if let Label::Known(id) = s.label {
                if !registry.contains_id(id) {
                    return Err(Error::UnknownClass(format!("id {id}")));
                }
            }
            if !keys.insert((s.image_id.as_str(), s.patch_index)) {
                return Err(Error::DuplicateSample {
                    image_id: s.image_id.clone(),
                    patch_index: s.patch_index,
                });
            }
        }
        Ok(Self {
            samples,
            registry,
            feature_dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.registry
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct known class ids present in the samples, ascending.
    pub fn known_classes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .samples
            .iter()
            .filter_map(|s| s.label.class_id())
            .collect();
        set.into_iter().collect()
    }

    pub fn n_known(&self) -> usize {
        self.known_classes().len()
    }

    pub fn has_unknown(&self) -> bool {
        self.samples.iter().any(|s| s.label == Label::Unknown)
    }

    /// Samples grouped per image, groups keyed and ordered by image id,
    /// each group ordered by patch index.
    pub fn group_by_image(&self) -> BTreeMap<&str, Vec<&Sample>> {
        let mut groups: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
        for s in &self.samples {
            groups.entry(s.image_id.as_str()).or_default().push(s);
        }
        for group in groups.values_mut() {
            group.sort_by_key(|s| s.patch_index);
        }
        groups
    }

    /// Copy in which every sample of the given classes is labeled unknown.
    pub fn relabel_as_unknown(&self, class_ids: &BTreeSet<usize>) -> Result<Dataset> {
        if let Some(&bad) = class_ids.iter().find(|&&id| !self.registry.contains_id(id)) {
            return Err(Error::UnknownClass(format!("id {bad}")));
        }
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let mut s = s.clone();
                if matches!(s.label, Label::Known(id) if class_ids.contains(&id)) {
                    s.label = Label::Unknown;
                }
                s
            })
            .collect();
        Ok(Dataset {
            samples,
            registry: self.registry.clone(),
            feature_dim: self.feature_dim,
        })
    }

    /// Re-expresses labels in `target`'s id space by class name; classes the
    /// target does not register become unknown.
    pub fn align_to(&self, target: &ClassRegistry) -> Dataset {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.label = match s.label {
                    Label::Known(id) => self
                        .registry
                        .name(id)
                        .and_then(|name| target.id(name))
                        .map_or(Label::Unknown, Label::Known),
                    Label::Unknown => Label::Unknown,
                };
                s
            })
            .collect();
        Dataset {
            samples,
            registry: target.clone(),
            feature_dim: self.feature_dim,
        }
    }

    /// Samples matching `keep`, in original order.
    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            registry: self.registry.clone(),
            feature_dim: self.feature_dim,
        }
    }

    /// Appends `other`'s samples; both must already share this registry's id space.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if other.feature_dim != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: other.feature_dim,
            });
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Dataset::new(samples, self.registry.clone(), self.feature_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureFormat {
    #[default]
    Osfv,
    Csv,
}

impl FeatureFormat {
    fn as_str(self) -> &'static str {
        match self {
            FeatureFormat::Osfv => "osfv",
            FeatureFormat::Csv => "csv",
        }
    }
}

/// Row-major feature table as stored in a feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub dim: usize,
    pub values: Vec<f32>,
}

impl FeatureTable {
    pub fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn write_osfv(path: &Path, table: &FeatureTable) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + table.values.len() * 4);
    buf.extend_from_slice(OSFV_MAGIC);
    buf.extend_from_slice(&(table.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(table.rows() as u32).to_le_bytes());
    for v in &table.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_osfv(path: &Path) -> Result<FeatureTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    if bytes.len() < 12 || &bytes[..4] != OSFV_MAGIC {
        return Err(Error::format(ctx, "missing OSFV header"));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + dim * rows * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            ctx,
            format!(
                "expected {expected} bytes for {rows}x{dim}, found {}",
                bytes.len()
            ),
        ));
    }
    let values = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureTable { dim, values })
}

fn read_feature_csv(path: &Path, dim: usize) -> Result<FeatureTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f32> = line
            .split(',')
            .map(|v| v.trim().parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| {
                Error::format(format!("{}:{}", path.display(), lineno + 1), e.to_string())
            })?;
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: row.len(),
            });
        }
        values.extend(row);
    }
    Ok(FeatureTable { dim, values })
}

/// Loads a manifest and the feature rows it references.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ctx = |line: usize| format!("{}:{}", path.display(), line);

    let mut header: BTreeMap<String, String> = BTreeMap::new();
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if records.is_empty() && !line.contains(',') {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(ctx(i + 1), "expected key=value"))?;
            header.insert(k.trim().to_string(), v.trim().to_string());
            continue;
        }
        if records.is_empty() && line.starts_with("classes=") {
            header.insert("classes".into(), line["classes=".len()..].to_string());
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::format(
                ctx(i + 1),
                "expected image_id,patch_index,class_name,row_index",
            ));
        }
        let patch: u32 = fields[1]
            .parse()
            .map_err(|_| Error::format(ctx(i + 1), "bad patch_index"))?;
        let row: usize = fields[3]
            .parse()
            .map_err(|_| Error::format(ctx(i + 1), "bad row_index"))?;
        records.push((fields[0].to_string(), patch, fields[2].to_string(), row));
    }

    let get = |key: &str| {
        header.get(key).ok_or_else(|| {
            Error::format(
                path.display().to_string(),
                format!("missing `{key}` header"),
            )
        })
    };
    let dim: usize = get("dim")?
        .parse()
        .map_err(|_| Error::format(path.display().to_string(), "bad dim"))?;
    let format = match header.get("format").map(String::as_str) {
        None | Some("osfv") => FeatureFormat::Osfv,
        Some("csv") => FeatureFormat::Csv,
        Some(other) => {
            return Err(Error::format(
                path.display().to_string(),
                format!("unsupported format `{other}`"),
            ))
        }
    };

    let registry = match header.get("classes") {
        Some(list) => ClassRegistry::new(list.split(',').map(str::trim).filter(|s| !s.is_empty()))?,
        None => ClassRegistry::new(
            records
                .iter()
                .map(|r| r.2.as_str())
                .filter(|n| *n != UNKNOWN_NAME),
        )?,
    };

    let table = if records.is_empty() && !header.contains_key("feature_file") {
        FeatureTable {
            dim,
            values: Vec::new(),
        }
    } else {
        let feature_path = resolve_relative(path, get("feature_file")?);
        match format {
            FeatureFormat::Osfv => read_osfv(&feature_path)?,
            FeatureFormat::Csv => read_feature_csv(&feature_path, dim)?,
        }
    };
    if table.dim != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: table.dim,
        });
    }

    let mut samples = Vec::with_capacity(records.len());
    for (image_id, patch_index, class_name, row) in records {
        if row >= table.rows() {
            return Err(Error::format(
                path.display().to_string(),
                format!("row_index {row} out of range ({} rows)", table.rows()),
            ));
        }
        samples.push(Sample {
            features: table.row(row).iter().map(|&v| f64::from(v)).collect(),
            label: registry.parse_label(&class_name)?,
            image_id,
            patch_index,
        });
    }
    Dataset::new(samples, registry, dim)
}

fn resolve_relative(manifest: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}

/// Writes `dataset` as a manifest plus an `OSFV` feature file, rows in sample order.
///
/// Features are stored as `f32`; datasets built from `f32`-representable
/// values round-trip exactly.
pub fn save_manifest(dataset: &Dataset, manifest_path: &Path, feature_path: &Path) -> Result<()> {
    let table = FeatureTable {
        dim: dataset.feature_dim,
        values: dataset
            .samples
            .iter()
            .flat_map(|s| s.features.iter().map(|&v| v as f32))
            .collect(),
    };
    write_osfv(feature_path, &table)?;

    let same_dir = manifest_path.parent() == feature_path.parent();
    let feature_ref = match (same_dir, feature_path.file_name()) {
        (true, Some(name)) => name.to_string_lossy().into_owned(),
        _ => feature_path.display().to_string(),
    };

    let mut out = String::new();
    out.push_str(&format!("feature_file={feature_ref}\n"));
    out.push_str(&format!("format={}\n", FeatureFormat::Osfv.as_str()));
    out.push_str(&format!("dim={}\n", dataset.feature_dim));
    out.push_str(&format!("classes={}\n", dataset.registry.names().join(",")));
    for (row, s) in dataset.samples.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.image_id,
            s.patch_index,
            dataset.registry.label_name(s.label)?,
            row
        ));
    }
    let mut file = fs::File::create(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(manifest_path, e))
}
