//! Voting: patches into an image decision, models into an ensemble decision,
//! and exhaustive ranking of model combinations.
//!
//! Both voters break ties toward unknown when it is among the leaders and
//! otherwise toward the lowest class id.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassRegistry, Label, UNKNOWN_NAME};
use crate::error::{Error, Result};
use crate::metrics::{confusion, na};

/// Largest filtered pool enumerated without `force`.
pub const MAX_POOL: usize = 20;

fn plurality<'a>(votes: impl Iterator<Item = &'a Label>) -> Option<Label> {
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for &v in votes {
        *counts.entry(v).or_default() += 1;
    }
    let top = *counts.values().max()?;
    let leaders: Vec<Label> = counts
        .into_iter()
        .filter(|&(_, c)| c == top)
        .map(|(l, _)| l)
        .collect();
    // known labels sort by id and unknown sorts last
    Some(if leaders.contains(&Label::Unknown) {
        Label::Unknown
    } else {
        leaders[0]
    })
}

/// Plurality label over the patches of one image.
pub fn image_vote(patch_predictions: &[Label]) -> Result<Label> {
    plurality(patch_predictions.iter())
        .ok_or_else(|| Error::InvalidInput("image_vote needs at least one patch".into()))
}

/// Unknown when unknown votes are strictly more than half; otherwise the
/// plurality among the known votes.
pub fn ensemble_vote(model_predictions: &[Label]) -> Result<Label> {
    if model_predictions.is_empty() {
        return Err(Error::InvalidInput(
            "ensemble_vote needs at least one vote".into(),
        ));
    }
    let unknown = model_predictions.iter().filter(|l| !l.is_known()).count();
    if 2 * unknown > model_predictions.len() {
        return Ok(Label::Unknown);
    }
    Ok(plurality(model_predictions.iter().filter(|l| l.is_known())).unwrap_or(Label::Unknown))
}

/// Ensemble decision for every sample; `members[m][i]` is model `m` on sample `i`.
pub fn ensemble_predictions(members: &[&[Label]]) -> Result<Vec<Label>> {
    let n = members.first().map_or(0, |m| m.len());
    if members.iter().any(|m| m.len() != n) {
        return Err(Error::InvalidInput(
            "member prediction lists differ in length".into(),
        ));
    }
    let mut votes = Vec::with_capacity(members.len());
    (0..n)
        .map(|i| {
            votes.clear();
            votes.extend(members.iter().map(|m| m[i]));
            ensemble_vote(&votes)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPredictions {
    pub name: String,
    pub predictions: Vec<Label>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumerationConfig {
    pub max_size: usize,
    /// Models need standalone NA strictly above this to join the pool.
    pub na_floor: f64,
    /// Enumerate pools larger than [`MAX_POOL`].
    pub force: bool,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        Self {
            max_size: 8,
            na_floor: 0.7,
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEnsemble {
    /// Indices into the input model list, ascending.
    pub members: Vec<usize>,
    pub na: f64,
}

/// NA of a prediction list; a side with no samples is left out.
pub fn prediction_na(truths: &[Label], predictions: &[Label], n_classes: usize) -> Result<f64> {
    na(&confusion(truths, predictions, n_classes)?, true)
}

fn combinations(pool: &[usize], max_size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for k in 1..=max_size.min(pool.len()) {
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(idx.iter().map(|&i| pool[i]).collect());
            let Some(pos) = (0..k).rev().find(|&p| idx[p] < pool.len() - k + p) else {
                break;
            };
            idx[pos] += 1;
            for q in pos + 1..k {
                idx[q] = idx[q - 1] + 1;
            }
        }
    }
    out
}

/// Every combination of up to `max_size` pool models, best NA first; equal NA
/// keeps the lexicographically smaller member list first.
pub fn enumerate_ensembles(
    truths: &[Label],
    models: &[ModelPredictions],
    n_classes: usize,
    config: EnumerationConfig,
) -> Result<Vec<RankedEnsemble>> {
    if config.max_size == 0 {
        return Err(Error::InvalidInput(
            "max ensemble size must be at least 1".into(),
        ));
    }
    if let Some(m) = models.iter().find(|m| m.predictions.len() != truths.len()) {
        return Err(Error::InvalidInput(format!(
            "model `{}` has {} predictions for {} truths",
            m.name,
            m.predictions.len(),
            truths.len()
        )));
    }
    let mut pool = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let standalone = prediction_na(truths, &m.predictions, n_classes)?;
        log::debug!("model {} standalone NA {standalone:.4}", m.name);
        if standalone > config.na_floor {
            pool.push(i);
        }
    }
    if pool.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no model has NA above {}",
            config.na_floor
        )));
    }
    if pool.len() > MAX_POOL && !config.force {
        return Err(Error::InvalidInput(format!(
            "{} models pass the floor; more than {MAX_POOL} needs force",
            pool.len()
        )));
    }
    let subsets = combinations(&pool, config.max_size);
    let mut ranked = subsets
        .into_par_iter()
        .map(|members| {
            let lists: Vec<&[Label]> = members
                .iter()
                .map(|&m| models[m].predictions.as_slice())
                .collect();
            let na = prediction_na(truths, &ensemble_predictions(&lists)?, n_classes)?;
            Ok(RankedEnsemble { members, na })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        b.na.total_cmp(&a.na)
            .then_with(|| a.members.cmp(&b.members))
    });
    Ok(ranked)
}

/// Ranked table as CSV: `rank,size,na,members` with members joined by `+`.
pub fn ranking_to_csv(models: &[ModelPredictions], ranked: &[RankedEnsemble]) -> String {
    let mut out = String::from("rank,size,na,members\n");
    for (rank, r) in ranked.iter().enumerate() {
        let names: Vec<&str> = r.members.iter().map(|&m| models[m].name.as_str()).collect();
        out.push_str(&format!(
            "{},{},{},{}\n",
            rank + 1,
            r.members.len(),
            r.na,
            names.join("+")
        ));
    }
    out
}

/// One row of a prediction dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpRow {
    pub key: String,
    pub truth: String,
    pub prediction: String,
}

/// Writes `key,truth,prediction` rows, labels by class name.
pub fn write_dump(path: &Path, rows: &[DumpRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dump(path: &Path) -> Result<Vec<DumpRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!("checked io kind"),
        }
    } else {
        Error::format(path.display().to_string(), e.to_string())
    }
}

/// Dumps of several models over the same keys, in one shared label space.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedDumps {
    pub registry: ClassRegistry,
    pub keys: Vec<String>,
    pub truths: Vec<Label>,
    pub models: Vec<ModelPredictions>,
}

/// Aligns dumps by key. Every dump must cover the same keys with the same
/// truths; classes are the sorted union of names seen.
pub fn align_dumps(dumps: &[(String, Vec<DumpRow>)]) -> Result<AlignedDumps> {
    let (_, first) = dumps
        .first()
        .ok_or_else(|| Error::InvalidInput("no prediction dumps given".into()))?;
    let mut names = BTreeSet::new();
    for (_, rows) in dumps {
        for r in rows {
            names.extend(
                [&r.truth, &r.prediction]
                    .into_iter()
                    .filter(|n| *n != UNKNOWN_NAME)
                    .cloned(),
            );
        }
    }
    let registry = ClassRegistry::new(names)?;
    let truth_of: BTreeMap<&str, &str> = first
        .iter()
        .map(|r| (r.key.as_str(), r.truth.as_str()))
        .collect();
    if truth_of.len() != first.len() {
        return Err(Error::InvalidInput(format!(
            "dump `{}` repeats a key",
            dumps[0].0
        )));
    }
    let keys: Vec<String> = truth_of.keys().map(|k| k.to_string()).collect();
    let truths = truth_of
        .values()
        .map(|t| registry.parse_label(t))
        .collect::<Result<Vec<_>>>()?;
    let models = dumps
        .iter()
        .map(|(name, rows)| {
            let by_key: BTreeMap<&str, &DumpRow> =
                rows.iter().map(|r| (r.key.as_str(), r)).collect();
            if by_key.len() != rows.len() || by_key.len() != keys.len() {
                return Err(Error::InvalidInput(format!(
                    "dump `{name}` does not cover the same keys"
                )));
            }
            let predictions = keys
                .iter()
                .map(|k| {
                    let row = by_key.get(k.as_str()).ok_or_else(|| {
                        Error::InvalidInput(format!("dump `{name}` lacks key `{k}`"))
                    })?;
                    if row.truth != truth_of[k.as_str()] {
                        return Err(Error::InvalidInput(format!(
                            "dump `{name}` disagrees on the truth of `{k}`"
                        )));
                    }
                    registry.parse_label(&row.prediction)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ModelPredictions {
                name: name.clone(),
                predictions,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignedDumps {
        registry,
        keys,
        truths,
        models,
    })
}
