//! Hyperparameter grid search over split plans.
//!
//! Each grid point is fit on a plan's fit set and scored on its validation
//! set; the winner is refit on the plan's final training set. Points that
//! differ only in a threshold share one fit. Work runs on a rayon pool and
//! results are reduced by point index, so the outcome does not depend on the
//! number of workers.
//!
//! Grid files hold one axis per line, `name=v1,v2,…`; `#` starts a comment
//! and the reserved key `selection` picks `auto`, `na` or `acc`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::classifiers::{fit, ClassifierSpec, TrainedModel, Variant};
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::metrics::{self, confusion};
use crate::protocols::SplitPlan;

pub type Hyperparams = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionMetric {
    /// NA when validation holds unknown-labeled samples, plain accuracy otherwise.
    #[default]
    Auto,
    Na,
    Acc,
}

impl FromStr for SelectionMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto" => Ok(SelectionMetric::Auto),
            "na" => Ok(SelectionMetric::Na),
            "acc" => Ok(SelectionMetric::Acc),
            other => Err(Error::InvalidInput(format!(
                "unknown selection metric `{other}`"
            ))),
        }
    }
}

impl fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMetric::Auto => "auto",
            SelectionMetric::Na => "na",
            SelectionMetric::Acc => "acc",
        })
    }
}

/// Ordered axes of candidate values. Points enumerate with the first axis
/// varying slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<(String, Vec<f64>)>,
    pub selection: SelectionMetric,
}

impl Grid {
    pub fn new(axes: Vec<(String, Vec<f64>)>, selection: SelectionMetric) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidInput("grid has no axes".into()));
        }
        for (i, (name, values)) in axes.iter().enumerate() {
            if values.is_empty() {
                return Err(Error::InvalidInput(format!("grid axis `{name}` is empty")));
            }
            if axes[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::InvalidInput(format!(
                    "grid axis `{name}` appears twice"
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "grid axis `{name}` has a non-finite value"
                )));
            }
        }
        Ok(Self { axes, selection })
    }

    pub fn axes(&self) -> &[(String, Vec<f64>)] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<Hyperparams> {
        let mut points = vec![Hyperparams::new()];
        for (name, values) in &self.axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.insert(name.clone(), v);
                        q
                    })
                })
                .collect();
        }
        points
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut axes = Vec::new();
        let mut selection = SelectionMetric::Auto;
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, values) = line.split_once('=').ok_or_else(|| {
                Error::format("grid", format!("expected name=values, found `{line}`"))
            })?;
            let name = name.trim();
            if name == "selection" {
                selection = values.parse()?;
                continue;
            }
            let values = values
                .split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|e| {
                        Error::format("grid", format!("axis `{name}`: `{}`: {e}", v.trim()))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            axes.push((name.to_string(), values));
        }
        Grid::new(axes, selection)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("selection={}\n", self.selection);
        for (name, values) in &self.axes {
            let vals: Vec<String> = values.iter().map(f64::to_string).collect();
            out.push_str(&format!("{name}={}\n", vals.join(",")));
        }
        out
    }

    /// Default search space for `variant` on `dim`-dimensional features.
    pub fn default_for(variant: Variant, dim: usize) -> Result<Self> {
        let d = dim.max(1) as f64;
        let c = vec![0.1, 1.0, 10.0, 100.0];
        let gamma = vec![1.0 / d, 4.0 / d, 16.0 / d];
        let tenths: Vec<f64> = (1..=9).map(|i| f64::from(i) / 10.0).collect();
        let nu = vec![0.01, 0.05, 0.1, 0.2];
        let axis = |n: &str, v: &Vec<f64>| (n.to_string(), v.clone());
        let axes = match variant {
            Variant::Osnn => vec![axis("T", &(3..=9).map(|i| f64::from(i) / 10.0).collect())],
            Variant::SvmOva => vec![axis("C", &c), axis("gamma", &gamma)],
            Variant::Psvm => vec![axis("C", &c), axis("gamma", &gamma), axis("tau", &tenths)],
            Variant::Softmax => vec![
                axis("l2", &vec![1e-4]),
                axis("lr", &vec![0.1]),
                axis("epochs", &vec![100.0]),
                axis("tau", &tenths),
            ],
            Variant::Ncm => vec![axis("tau", &tenths)],
            Variant::Et => vec![
                axis("M", &vec![100.0]),
                axis("min_leaf", &vec![1.0, 5.0]),
                axis("tau", &tenths),
            ],
            Variant::OccPerClass => vec![axis("nu", &nu), axis("gamma", &gamma)],
            Variant::TwoStage => vec![
                axis("nu", &nu),
                axis("C", &c),
                axis("gamma", &gamma),
                axis("tau", &tenths),
            ],
            Variant::Pisvm => vec![axis("C", &c), axis("gamma", &gamma), axis("delta", &tenths)],
            v => return Err(Error::UnimplementedVariant(v.name())),
        };
        Grid::new(axes, SelectionMetric::Auto)
    }
}

pub trait Predictor {
    fn predict(&self, f: &[f64]) -> Result<Label>;
}

impl Predictor for TrainedModel {
    fn predict(&self, f: &[f64]) -> Result<Label> {
        TrainedModel::predict(self, f)
    }
}

/// Something the search can fit at a grid point.
pub trait Learner: Sync {
    type Model: Predictor + Send + Sync;

    fn fit(&self, hyperparams: &Hyperparams, data: &Dataset) -> Result<Self::Model>;

    /// Hyperparameter that [`rethreshold`](Self::rethreshold) can change without refitting.
    fn threshold_key(&self) -> Option<&str> {
        None
    }

    fn rethreshold(&self, model: &Self::Model, _value: f64) -> Result<Self::Model> {
        let _ = model;
        Err(Error::InvalidInput("learner has no threshold".into()))
    }
}

/// Fits classifier-zoo models from a spec template.
#[derive(Debug, Clone)]
pub struct ZooLearner {
    pub template: ClassifierSpec,
}

impl Learner for ZooLearner {
    type Model = TrainedModel;

    fn fit(&self, hyperparams: &Hyperparams, data: &Dataset) -> Result<TrainedModel> {
        let mut spec = self.template.clone();
        spec.hyperparams
            .extend(hyperparams.iter().map(|(k, v)| (k.clone(), *v)));
        fit(&spec, data)
    }

    fn threshold_key(&self) -> Option<&str> {
        self.template.variant.threshold_key()
    }

    fn rethreshold(&self, model: &TrainedModel, value: f64) -> Result<TrainedModel> {
        model.with_threshold(value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub index: usize,
    pub hyperparams: Hyperparams,
    /// Validation metric averaged over plans; `None` if fitting failed.
    pub metric: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct SearchResult<M> {
    pub best: Hyperparams,
    pub best_metric: f64,
    pub metric: SelectionMetric,
    pub final_model: M,
    pub log: Vec<LogEntry>,
}

/// Validation score of `model` on `data` under `selection`.
pub fn validation_metric<P: Predictor>(
    model: &P,
    data: &Dataset,
    selection: SelectionMetric,
) -> Result<f64> {
    let truths: Vec<Label> = data.samples().iter().map(|s| s.label).collect();
    let preds = data
        .samples()
        .iter()
        .map(|s| model.predict(&s.features))
        .collect::<Result<Vec<_>>>()?;
    let cm = confusion(&truths, &preds, data.registry().len())?;
    let use_na = match selection {
        SelectionMetric::Auto => data.has_unknown(),
        SelectionMetric::Na => true,
        SelectionMetric::Acc => false,
    };
    if use_na {
        metrics::na(&cm, false)
    } else {
        metrics::accuracy(&cm).ok_or_else(|| Error::Degenerate("empty validation set".into()))
    }
}

fn resolve(selection: SelectionMetric, plans: &[SplitPlan]) -> SelectionMetric {
    match selection {
        SelectionMetric::Auto if plans.iter().any(|p| p.validation.has_unknown()) => {
            SelectionMetric::Na
        }
        SelectionMetric::Auto => SelectionMetric::Acc,
        other => other,
    }
}

/// Runs the grid over every plan (repetitions share `final_train`), picks the
/// point with the best mean validation metric (earliest on ties) and refits
/// it on `plans[0].final_train`.
pub fn grid_search<L: Learner>(
    learner: &L,
    plans: &[SplitPlan],
    grid: &Grid,
    jobs: Option<usize>,
) -> Result<SearchResult<L::Model>> {
    if plans.is_empty() {
        return Err(Error::InvalidInput(
            "grid search needs at least one plan".into(),
        ));
    }
    let selection = resolve(grid.selection, plans);
    let points = grid.points();

    // points that differ only in the threshold share a fit
    let threshold = learner
        .threshold_key()
        .filter(|k| grid.axes.iter().any(|(n, _)| n == k))
        .map(str::to_string);
    let mut groups: BTreeMap<Vec<(String, u64)>, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        let key = p
            .iter()
            .filter(|(k, _)| Some(*k) != threshold.as_ref())
            .map(|(k, v)| (k.clone(), v.to_bits()))
            .collect();
        groups.entry(key).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();

    let evaluate_group = |members: &Vec<usize>| -> Vec<(usize, Result<f64>)> {
        let mut sums: Vec<Result<f64>> = members.iter().map(|_| Ok(0.0)).collect();
        for plan in plans {
            let base = match learner.fit(&points[members[0]], &plan.fit) {
                Ok(m) => m,
                Err(e) => return members.iter().map(|&i| (i, Err(clone_err(&e)))).collect(),
            };
            for (slot, &i) in members.iter().enumerate() {
                if sums[slot].is_err() {
                    continue;
                }
                let metric = match &threshold {
                    Some(key) if slot > 0 || points[i] != points[members[0]] => learner
                        .rethreshold(&base, points[i][key])
                        .and_then(|m| validation_metric(&m, &plan.validation, selection)),
                    _ => validation_metric(&base, &plan.validation, selection),
                };
                sums[slot] = match (&sums[slot], metric) {
                    (Ok(s), Ok(m)) => Ok(s + m),
                    (_, Err(e)) => Err(e),
                    (Err(_), _) => unreachable!("skipped above"),
                };
            }
        }
        members
            .iter()
            .zip(sums)
            .map(|(&i, s)| (i, s.map(|total| total / plans.len() as f64)))
            .collect()
    };

    let run = || -> Vec<(usize, Result<f64>)> {
        groups.par_iter().flat_map_iter(evaluate_group).collect()
    };
    let mut results = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start {n} workers: {e}")))?
            .install(run),
        None => run(),
    };
    results.sort_by_key(|(i, _)| *i);

    let log: Vec<LogEntry> = results
        .into_iter()
        .map(|(index, r)| LogEntry {
            index,
            hyperparams: points[index].clone(),
            metric: r.as_ref().ok().copied(),
            error: r.err().map(|e| e.to_string()),
        })
        .collect();
    for entry in log.iter().filter(|e| e.error.is_some()) {
        log::warn!(
            "grid point {} failed: {}",
            entry.index,
            entry.error.as_deref().unwrap_or("")
        );
    }
    let winner = log
        .iter()
        .filter_map(|e| e.metric.map(|m| (e.index, m)))
        .fold(None, |best: Option<(usize, f64)>, (i, m)| match best {
            Some((_, bm)) if bm >= m => best,
            _ => Some((i, m)),
        });
    let Some((best_index, best_metric)) = winner else {
        let first = log.iter().find_map(|e| e.error.clone()).unwrap_or_default();
        return Err(Error::Degenerate(format!(
            "every grid point failed to fit; first error: {first}"
        )));
    };
    let best = points[best_index].clone();
    log::info!("selected grid point {best_index} with {selection} {best_metric:.4}");
    let final_model = learner.fit(&best, &plans[0].final_train)?;
    Ok(SearchResult {
        best,
        best_metric,
        metric: selection,
        final_model,
        log,
    })
}

fn clone_err(e: &Error) -> Error {
    Error::InvalidInput(e.to_string())
}

/// Search log as CSV: `index`, one column per axis, `metric`, `status`.
pub fn log_to_csv(grid: &Grid, log: &[LogEntry]) -> String {
    let names: Vec<&str> = grid.axes.iter().map(|(n, _)| n.as_str()).collect();
    let mut out = format!("index,{},metric,status\n", names.join(","));
    for e in log {
        let values: Vec<String> = names
            .iter()
            .map(|n| e.hyperparams[*n].to_string())
            .collect();
        let (metric, status) = match (&e.metric, &e.error) {
            (Some(m), _) => (m.to_string(), "ok".to_string()),
            (None, Some(err)) => (String::new(), format!("\"{}\"", err.replace('"', "'"))),
            (None, None) => (String::new(), "failed".to_string()),
        };
        out.push_str(&format!(
            "{},{},{metric},{status}\n",
            e.index,
            values.join(",")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ClassRegistry, Sample};
    use crate::numerics::Rng;
    use crate::protocols::{plan_closed, plan_open};

    struct Mock {
        peak: f64,
        fail_above: Option<f64>,
    }

    struct MockModel {
        quality: f64,
    }

    impl Predictor for MockModel {
        // right on the first `quality` share of each 100 consecutive feature ids
        fn predict(&self, f: &[f64]) -> Result<Label> {
            let id = f[0] as usize;
            let truth = if f[1] < 0.0 {
                Label::Unknown
            } else {
                Label::Known(f[1] as usize)
            };
            let right = ((id % 100) as f64) < 100.0 * self.quality;
            Ok(match (right, truth) {
                (true, t) => t,
                (false, Label::Unknown) => Label::Known(0),
                (false, Label::Known(_)) => Label::Unknown,
            })
        }
    }

    impl Learner for Mock {
        type Model = MockModel;

        fn fit(&self, h: &Hyperparams, _data: &Dataset) -> Result<MockModel> {
            let v = h["v"];
            if self.fail_above.is_some_and(|t| v > t) {
                return Err(Error::Degenerate("mock refuses".into()));
            }
            Ok(MockModel {
                quality: (1.0 - (v - self.peak).abs() / 10.0).clamp(0.0, 1.0),
            })
        }
    }

    /// Features encode `(sample id, true class or -1)` for the mock.
    fn mock_data(classes: usize, images: usize) -> Dataset {
        let names: Vec<String> = (0..classes).map(|c| format!("k{c}")).collect();
        let mut samples = Vec::new();
        for c in 0..classes {
            for i in 0..images {
                for p in 0..10u32 {
                    let id = samples.len();
                    samples.push(Sample {
                        features: vec![id as f64, c as f64],
                        label: Label::Known(c),
                        image_id: format!("k{c}/{i}"),
                        patch_index: p,
                    });
                }
            }
        }
        Dataset::new(samples, ClassRegistry::new(names).unwrap(), 2).unwrap()
    }

    fn relabel_features(plan: &mut SplitPlan) {
        let samples: Vec<Sample> = plan
            .validation
            .samples()
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.features[1] = s.label.class_id().map_or(-1.0, |c| c as f64);
                s
            })
            .collect();
        plan.validation = Dataset::new(samples, plan.validation.registry().clone(), 2).unwrap();
    }

    fn axis(name: &str, values: &[f64]) -> (String, Vec<f64>) {
        (name.to_string(), values.to_vec())
    }

    #[test]
    fn mock_peak_is_recovered() {
        let mut plan = plan_open(&mock_data(4, 10), 0.5, 1).unwrap();
        relabel_features(&mut plan);
        let grid = Grid::new(
            vec![axis("v", &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0])],
            SelectionMetric::Auto,
        )
        .unwrap();
        let r = grid_search(
            &Mock {
                peak: 4.0,
                fail_above: None,
            },
            &[plan],
            &grid,
            Some(2),
        )
        .unwrap();
        assert_eq!(r.best["v"], 4.0);
        assert_eq!(r.metric, SelectionMetric::Na);
        assert_eq!(r.log.len(), 7);
        let max = r
            .log
            .iter()
            .filter_map(|e| e.metric)
            .fold(f64::MIN, f64::max);
        assert_eq!(r.best_metric, max);
    }

    #[test]
    fn ties_go_to_the_earliest_point_and_failures_are_logged() {
        let plan = plan_closed(&mock_data(2, 4), 0.5, 1).unwrap();
        let grid = Grid::new(vec![axis("v", &[3.0, 5.0, 4.0, 9.0])], SelectionMetric::Acc).unwrap();
        let r = grid_search(
            &Mock {
                peak: 4.0,
                fail_above: Some(8.0),
            },
            &[plan.clone()],
            &grid,
            None,
        )
        .unwrap();
        assert_eq!(r.best["v"], 3.0);
        assert!(r.log[3].metric.is_none() && r.log[3].error.is_some());
        let csv = log_to_csv(&grid, &r.log);
        assert!(csv.starts_with("index,v,metric,status\n0,3,"));

        let all_fail = Grid::new(vec![axis("v", &[9.0])], SelectionMetric::Acc).unwrap();
        assert!(grid_search(
            &Mock {
                peak: 4.0,
                fail_above: Some(8.0)
            },
            &[plan],
            &all_fail,
            None
        )
        .is_err());
    }

    #[test]
    fn grid_points_and_files() {
        let g = Grid::parse("# comment\nselection=na\nC=1,10\ntau=0.5, 0.7 ,0.9\n").unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.selection, SelectionMetric::Na);
        let p = g.points();
        assert_eq!((p[0]["C"], p[0]["tau"]), (1.0, 0.5));
        assert_eq!((p[1]["C"], p[1]["tau"]), (1.0, 0.7));
        assert_eq!((p[3]["C"], p[3]["tau"]), (10.0, 0.5));
        assert_eq!(Grid::parse(&g.to_text()).unwrap(), g);
        assert!(Grid::parse("C=").is_err());
        assert!(Grid::parse("").is_err());
        assert!(Grid::parse("C=1\nC=2").is_err());
        for v in Variant::ALL.into_iter().filter(|v| v.is_implemented()) {
            assert!(!Grid::default_for(v, 8).unwrap().is_empty());
        }
        assert_eq!(
            Grid::default_for(Variant::Pisvm, 8).unwrap().len(),
            4 * 3 * 9
        );
    }

    fn blob_train(seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let names: Vec<String> = (0..4).map(|c| format!("c{c}")).collect();
        let mut samples = Vec::new();
        for c in 0..4 {
            for i in 0..6 {
                for p in 0..3u32 {
                    let mut f: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
                    f[c % 3] += 6.0 * (1 + c / 3) as f64;
                    samples.push(Sample {
                        features: f,
                        label: Label::Known(c),
                        image_id: format!("c{c}/{i}"),
                        patch_index: p,
                    });
                }
            }
        }
        Dataset::new(samples, ClassRegistry::new(names).unwrap(), 3).unwrap()
    }

    #[test]
    fn zoo_search_is_worker_independent_and_refits_on_everything() {
        let train = blob_train(3);
        let plans = vec![
            plan_open(&train, 0.3, 1).unwrap(),
            plan_open(&train, 0.3, 2).unwrap(),
        ];
        let learner = ZooLearner {
            template: ClassifierSpec::new(Variant::Psvm).with_seed(1),
        };
        let grid = Grid::new(
            vec![
                axis("C", &[1.0, 10.0]),
                axis("gamma", &[0.3]),
                axis("tau", &[0.2, 0.5, 0.8]),
            ],
            SelectionMetric::Auto,
        )
        .unwrap();
        let a = grid_search(&learner, &plans, &grid, Some(1)).unwrap();
        let b = grid_search(&learner, &plans, &grid, Some(4)).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.best, b.best);
        assert_eq!(a.final_model.to_document(), b.final_model.to_document());
        assert_eq!(a.final_model.classes().len(), 4);

        // a shared fit with a new threshold equals a fresh fit at that point
        for e in &a.log {
            let m = learner.fit(&e.hyperparams, &plans[0].fit).unwrap();
            let m1 = learner.fit(&e.hyperparams, &plans[1].fit).unwrap();
            let want = (validation_metric(&m, &plans[0].validation, SelectionMetric::Na).unwrap()
                + validation_metric(&m1, &plans[1].validation, SelectionMetric::Na).unwrap())
                / 2.0;
            assert_eq!(e.metric, Some(want));
        }
    }
}
