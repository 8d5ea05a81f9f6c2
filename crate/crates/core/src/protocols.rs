//! Closed, Open and NetOpen split planning.
//!
//! Every planner splits whole images, never individual patches, so no image
//! contributes to both fitting and validation. Plans can be written to a
//! small text document and replayed against the same datasets:
//!
//! ```text
//! osbench_plan_v1
//! protocol=open
//! seed=7
//! val_fraction=0.2
//! ku_classes=cam_b,cam_d
//! [roles]
//! fit,cam_a/img_000
//! validation,cam_a/img_001
//! validation,cam_b/img_000
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::data::{Dataset, Label, Sample};
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

const PLAN_HEADER: &str = "osbench_plan_v1";
const SHUFFLE_TAG: u64 = 0x5EED_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    Closed,
    Open,
    NetOpen,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Closed => "closed",
            Protocol::Open => "open",
            Protocol::NetOpen => "netopen",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "closed" => Ok(Protocol::Closed),
            "open" => Ok(Protocol::Open),
            "netopen" => Ok(Protocol::NetOpen),
            other => Err(Error::InvalidInput(format!("unknown protocol `{other}`"))),
        }
    }
}

/// Fit, validation and final training sets for one protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub protocol: Protocol,
    pub seed: u64,
    pub val_fraction: f64,
    pub fit: Dataset,
    /// Known-unknown samples carry [`Label::Unknown`].
    pub validation: Dataset,
    pub final_train: Dataset,
    /// Training classes held out as known-unknown (OPEN only).
    pub ku_class_ids: BTreeSet<usize>,
    /// Names of the known-unknown classes: training classes for OPEN, extra
    /// dataset classes for NETOPEN.
    pub ku_class_names: Vec<String>,
    roles: Vec<(Role, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Role {
    Fit,
    Validation,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Fit => "fit",
            Role::Validation => "validation",
        }
    }

    fn parse(s: &str) -> Option<Role> {
        match s {
            "fit" => Some(Role::Fit),
            "validation" => Some(Role::Validation),
            _ => None,
        }
    }
}

/// Image ids per known class, in first-appearance order.
fn images_by_class(train: &Dataset) -> Result<BTreeMap<usize, Vec<String>>> {
    let mut owner: BTreeMap<&str, Label> = BTreeMap::new();
    let mut by_class: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for s in train.samples() {
        let Label::Known(id) = s.label else {
            return Err(Error::InvalidInput(format!(
                "training image `{}` is labeled unknown",
                s.image_id
            )));
        };
        match owner.get(s.image_id.as_str()) {
            Some(&prev) if prev != s.label => {
                return Err(Error::InvalidInput(format!(
                    "image `{}` has patches of two classes",
                    s.image_id
                )));
            }
            Some(_) => {}
            None => {
                owner.insert(&s.image_id, s.label);
                by_class.entry(id).or_default().push(s.image_id.clone());
            }
        }
    }
    Ok(by_class)
}

fn validation_count(images: usize, val_fraction: f64) -> usize {
    let raw = (val_fraction * images as f64 + 1e-9).floor() as usize;
    raw.clamp(1, images - 1)
}

/// Per class, a seeded shuffle of its images; the first share goes to validation.
fn split_images(
    by_class: &BTreeMap<usize, Vec<String>>,
    val_fraction: f64,
    seed: u64,
) -> Result<BTreeMap<String, Role>> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let mut roles = BTreeMap::new();
    for (&class, images) in by_class {
        if images.len() < 2 {
            return Err(Error::Degenerate(format!(
                "class id {class} has {} image(s); at least 2 are needed",
                images.len()
            )));
        }
        let mut order = images.clone();
        Rng::derived(seed, SHUFFLE_TAG + class as u64).shuffle(&mut order);
        let n_val = validation_count(order.len(), val_fraction);
        for (i, image) in order.into_iter().enumerate() {
            roles.insert(
                image,
                if i < n_val {
                    Role::Validation
                } else {
                    Role::Fit
                },
            );
        }
    }
    Ok(roles)
}

fn select(train: &Dataset, roles: &BTreeMap<String, Role>, role: Role) -> Dataset {
    train.filter(|s| roles.get(&s.image_id) == Some(&role))
}

fn role_list(roles: &BTreeMap<String, Role>, extra: Option<&Dataset>) -> Vec<(Role, String)> {
    let mut out: Vec<(Role, String)> = roles.iter().map(|(id, &r)| (r, id.clone())).collect();
    if let Some(extra) = extra {
        out.extend(
            extra
                .group_by_image()
                .keys()
                .map(|id| (Role::Validation, id.to_string())),
        );
    }
    out
}

/// Validation = held-out images of every class; nothing simulates unknowns.
pub fn plan_closed(train: &Dataset, val_fraction: f64, seed: u64) -> Result<SplitPlan> {
    let by_class = images_by_class(train)?;
    let roles = split_images(&by_class, val_fraction, seed)?;
    Ok(SplitPlan {
        protocol: Protocol::Closed,
        seed,
        val_fraction,
        fit: select(train, &roles, Role::Fit),
        validation: select(train, &roles, Role::Validation),
        final_train: train.clone(),
        ku_class_ids: BTreeSet::new(),
        ku_class_names: Vec::new(),
        roles: role_list(&roles, None),
    })
}

/// A seeded half of the classes (`⌊n/2⌋`) becomes known-unknown for validation.
pub fn plan_open(train: &Dataset, val_fraction: f64, seed: u64) -> Result<SplitPlan> {
    let by_class = images_by_class(train)?;
    let classes: Vec<usize> = by_class.keys().copied().collect();
    if classes.len() < 2 {
        return Err(Error::Degenerate(format!(
            "OPEN needs at least 2 classes, found {}",
            classes.len()
        )));
    }
    let picks = Rng::new(seed).sample_indices(classes.len(), classes.len() / 2);
    let ku: BTreeSet<usize> = picks.into_iter().map(|i| classes[i]).collect();
    build_open(train, &by_class, ku, val_fraction, seed)
}

fn build_open(
    train: &Dataset,
    by_class: &BTreeMap<usize, Vec<String>>,
    ku: BTreeSet<usize>,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitPlan> {
    let mut roles = split_images(by_class, val_fraction, seed)?;
    for (class, images) in by_class {
        if ku.contains(class) {
            for image in images {
                roles.insert(image.clone(), Role::Validation);
            }
        }
    }
    open_plan(train, &roles, ku, val_fraction, seed)
}

fn open_plan(
    train: &Dataset,
    roles: &BTreeMap<String, Role>,
    ku: BTreeSet<usize>,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitPlan> {
    let names = ku
        .iter()
        .map(|&id| train.registry().name(id).unwrap_or_default().to_string())
        .collect();
    Ok(SplitPlan {
        protocol: Protocol::Open,
        seed,
        val_fraction,
        fit: select(train, roles, Role::Fit),
        validation: select(train, roles, Role::Validation).relabel_as_unknown(&ku)?,
        final_train: train.clone(),
        ku_class_ids: ku,
        ku_class_names: names,
        roles: role_list(roles, None),
    })
}

/// Every training class is fit; an extra dataset supplies the known-unknowns.
pub fn plan_netopen(
    train: &Dataset,
    extra_ku: &Dataset,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitPlan> {
    if extra_ku.is_empty() {
        return Err(Error::Degenerate(
            "NETOPEN needs a nonempty known-unknown dataset".into(),
        ));
    }
    if extra_ku.feature_dim() != train.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: train.feature_dim(),
            actual: extra_ku.feature_dim(),
        });
    }
    let train_names: BTreeSet<&str> = train
        .registry()
        .names()
        .iter()
        .map(String::as_str)
        .collect();
    if let Some(shared) = extra_ku
        .registry()
        .names()
        .iter()
        .find(|n| train_names.contains(n.as_str()))
    {
        return Err(Error::InvalidInput(format!(
            "class `{shared}` appears in both the training and known-unknown data"
        )));
    }
    let by_class = images_by_class(train)?;
    let roles = split_images(&by_class, val_fraction, seed)?;
    let unknowns = extra_ku.align_to(train.registry());
    let validation = select(train, &roles, Role::Validation).concat(&unknowns)?;
    let mut names: Vec<String> = extra_ku
        .known_classes()
        .into_iter()
        .filter_map(|id| extra_ku.registry().name(id).map(str::to_string))
        .collect();
    names.sort();
    Ok(SplitPlan {
        protocol: Protocol::NetOpen,
        seed,
        val_fraction,
        fit: select(train, &roles, Role::Fit),
        validation,
        final_train: train.clone(),
        ku_class_ids: BTreeSet::new(),
        ku_class_names: names,
        roles: role_list(&roles, Some(extra_ku)),
    })
}

/// Where the datasets a plan refers to live, recorded in the plan document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlanSources {
    pub train_manifest: Option<String>,
    pub extra_ku_manifest: Option<String>,
}

impl SplitPlan {
    /// Renders the plan as an auditable text document.
    pub fn to_document(&self, sources: &PlanSources) -> String {
        let mut out = format!(
            "{PLAN_HEADER}\nprotocol={}\nseed={}\nval_fraction={}\n",
            self.protocol, self.seed, self.val_fraction
        );
        if let Some(p) = &sources.train_manifest {
            out.push_str(&format!("train_manifest={p}\n"));
        }
        if let Some(p) = &sources.extra_ku_manifest {
            out.push_str(&format!("extra_ku_manifest={p}\n"));
        }
        out.push_str(&format!(
            "ku_classes={}\n[roles]\n",
            self.ku_class_names.join(",")
        ));
        for (role, image) in &self.roles {
            out.push_str(&format!("{},{image}\n", role.as_str()));
        }
        out
    }

    /// Image ids with their role, as written to the plan document.
    pub fn roles(&self) -> impl Iterator<Item = (&'static str, &str)> {
        self.roles.iter().map(|(r, id)| (r.as_str(), id.as_str()))
    }
}

/// A parsed plan document.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanDocument {
    pub protocol: Protocol,
    pub seed: u64,
    pub val_fraction: f64,
    pub ku_classes: Vec<String>,
    pub sources: PlanSources,
    roles: Vec<(Role, String)>,
}

impl PlanDocument {
    pub fn parse(text: &str) -> Result<PlanDocument> {
        let err = |m: String| Error::format("plan", m);
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some(PLAN_HEADER) {
            return Err(err(format!("first line must be `{PLAN_HEADER}`")));
        }
        let mut header = BTreeMap::new();
        for line in lines.by_ref() {
            if line == "[roles]" {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, found `{line}`")))?;
            header.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut roles = Vec::new();
        for line in lines {
            let (r, id) = line
                .split_once(',')
                .ok_or_else(|| err(format!("expected role,image_id, found `{line}`")))?;
            let role = Role::parse(r).ok_or_else(|| err(format!("unknown role `{r}`")))?;
            roles.push((role, id.to_string()));
        }
        let get = |k: &str| header.get(k).ok_or_else(|| err(format!("missing `{k}`")));
        let ku_classes = get("ku_classes")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        Ok(PlanDocument {
            protocol: get("protocol")?.parse()?,
            seed: get("seed")?
                .parse()
                .map_err(|e| err(format!("seed: {e}")))?,
            val_fraction: get("val_fraction")?
                .parse()
                .map_err(|e| err(format!("val_fraction: {e}")))?,
            ku_classes,
            sources: PlanSources {
                train_manifest: header.get("train_manifest").cloned(),
                extra_ku_manifest: header.get("extra_ku_manifest").cloned(),
            },
            roles,
        })
    }

    /// Rebuilds the plan from the recorded roles, checking they cover the
    /// training images exactly.
    pub fn replay(&self, train: &Dataset, extra_ku: Option<&Dataset>) -> Result<SplitPlan> {
        let by_class = images_by_class(train)?;
        let recorded: BTreeMap<&str, Role> =
            self.roles.iter().map(|(r, id)| (id.as_str(), *r)).collect();
        let extra_images: BTreeSet<String> = extra_ku
            .map(|e| e.group_by_image().keys().map(|k| k.to_string()).collect())
            .unwrap_or_default();
        let mut roles = BTreeMap::new();
        for image in by_class.values().flatten() {
            let role = recorded.get(image.as_str()).ok_or_else(|| {
                Error::format("plan", format!("image `{image}` has no recorded role"))
            })?;
            roles.insert(image.clone(), *role);
        }
        if let Some(stray) = recorded
            .keys()
            .find(|k| !roles.contains_key(**k) && !extra_images.contains(**k))
        {
            return Err(Error::format(
                "plan",
                format!("image `{stray}` is not in the data"),
            ));
        }

        let plan = match self.protocol {
            Protocol::Closed => SplitPlan {
                protocol: Protocol::Closed,
                seed: self.seed,
                val_fraction: self.val_fraction,
                fit: select(train, &roles, Role::Fit),
                validation: select(train, &roles, Role::Validation),
                final_train: train.clone(),
                ku_class_ids: BTreeSet::new(),
                ku_class_names: Vec::new(),
                roles: role_list(&roles, None),
            },
            Protocol::Open => {
                let ku = self
                    .ku_classes
                    .iter()
                    .map(|n| {
                        train
                            .registry()
                            .id(n)
                            .ok_or_else(|| Error::UnknownClass(n.clone()))
                    })
                    .collect::<Result<BTreeSet<_>>>()?;
                open_plan(train, &roles, ku, self.val_fraction, self.seed)?
            }
            Protocol::NetOpen => {
                let extra = extra_ku.ok_or_else(|| {
                    Error::InvalidInput("NETOPEN plan needs its known-unknown dataset".into())
                })?;
                let validation = select(train, &roles, Role::Validation)
                    .concat(&extra.align_to(train.registry()))?;
                SplitPlan {
                    protocol: Protocol::NetOpen,
                    seed: self.seed,
                    val_fraction: self.val_fraction,
                    fit: select(train, &roles, Role::Fit),
                    validation,
                    final_train: train.clone(),
                    ku_class_ids: BTreeSet::new(),
                    ku_class_names: self.ku_classes.clone(),
                    roles: role_list(&roles, Some(extra)),
                }
            }
        };
        Ok(plan)
    }
}

/// Builds the plan for `protocol`; `extra_ku` is required for NETOPEN only.
pub fn plan(
    protocol: Protocol,
    train: &Dataset,
    extra_ku: Option<&Dataset>,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitPlan> {
    match protocol {
        Protocol::Closed => plan_closed(train, val_fraction, seed),
        Protocol::Open => plan_open(train, val_fraction, seed),
        Protocol::NetOpen => {
            let extra = extra_ku.ok_or_else(|| {
                Error::InvalidInput("NETOPEN requires a known-unknown dataset".into())
            })?;
            plan_netopen(train, extra, val_fraction, seed)
        }
    }
}

/// Distinct image ids of a dataset.
pub fn image_ids(data: &Dataset) -> BTreeSet<&str> {
    data.samples()
        .iter()
        .map(|s: &Sample| s.image_id.as_str())
        .collect()
}
