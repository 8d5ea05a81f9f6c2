use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use osbench_core::classifiers::{
    export_decision_grid, load_model, save_model, write_decision_grid, BinaryDetector,
    ClassifierSpec, GridBounds, Variant,
};
use osbench_core::data::{load_manifest, save_manifest, ClassRegistry, Dataset, Label, Sample};
use osbench_core::features::{
    extract_features, extract_patches, read_osim, CooccurrenceConfig, PatchSpec,
};
use osbench_core::fusion::{
    align_dumps, enumerate_ensembles, ranking_to_csv, read_dump, write_dump, EnumerationConfig,
};
use osbench_core::protocols::{
    plan, PlanDocument, PlanSources, Protocol, SplitPlan, DEFAULT_VAL_FRACTION,
};
use osbench_core::report::{evaluate, Evaluator, Granularity, Mode, Report};
use osbench_core::search::{grid_search, log_to_csv, Grid, ZooLearner};
use osbench_core::synth::{generate, SynthConfig};
use osbench_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "osbench",
    version,
    about = "Open-set classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut patches from images and write residual co-occurrence features.
    Extract(ExtractArgs),
    /// Plan fit/validation splits under a training protocol.
    Split(SplitArgs),
    /// Grid-search a classifier on a plan and save the final model.
    Train(TrainArgs),
    /// Score one or more models on a test manifest.
    Evaluate(EvaluateArgs),
    /// Rank every ensemble of saved predictions.
    Fuse(FuseArgs),
    /// Generate a synthetic open-set benchmark.
    Synth(SynthArgs),
    /// Scan a model's decisions over a plane of two feature dimensions.
    ExportGrid(ExportGridArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// Directory holding one subdirectory of `.osim` images per class.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out_manifest: PathBuf,
    #[arg(long)]
    out_features: PathBuf,
    #[arg(long, default_value_t = 64)]
    patch_size: usize,
    /// Patches kept per image, best quality first.
    #[arg(long, default_value_t = 32)]
    patches: usize,
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    #[arg(long, default_value_t = 2)]
    truncation: u32,
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Use the colour difference planes instead of green.
    #[arg(long)]
    cross_channel: bool,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// closed, open or netopen.
    #[arg(long)]
    protocol: Protocol,
    /// Known-unknown manifest, required by netopen.
    #[arg(long)]
    extra_ku: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_VAL_FRACTION)]
    val_fraction: f64,
    #[arg(long, env = "OSBENCH_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Classifier variant, e.g. PSVM, PISVM, OSNN, ET.
    #[arg(long)]
    classifier: String,
    /// Grid file; defaults to the built-in grid for the classifier.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Fixed hyperparameter, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Plans to average the search over; extra plans reuse the protocol with seeds seed+1, seed+2, ….
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    /// Worker threads for the search.
    #[arg(long)]
    jobs: Option<usize>,
    /// Seed for stochastic classifiers.
    #[arg(long, env = "OSBENCH_SEED", default_value_t = 0)]
    seed: u64,
    /// Train a known-versus-unknown detector (PSVM or ET) from `--set` values instead of searching.
    #[arg(long)]
    detector: bool,
    #[arg(long)]
    out: PathBuf,
    /// Search log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model or detector file; several models are fused by vote.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "image")]
    granularity: Granularity,
    #[arg(long, default_value = "classify")]
    mode: Mode,
    /// Score test sets that lack known or unknown samples.
    #[arg(long)]
    allow_partial: bool,
    #[arg(long)]
    out: PathBuf,
    /// Prediction dump at the chosen granularity, input for `fuse`.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    /// Prediction dump, `name=path` or `path` (named by file stem); repeatable.
    #[arg(long = "dump", required = true)]
    dumps: Vec<String>,
    #[arg(long, default_value_t = 8)]
    max_size: usize,
    #[arg(long, default_value_t = 0.7)]
    na_floor: f64,
    /// Enumerate pools of more than 20 models.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    n_known: usize,
    #[arg(long, default_value_t = 8)]
    n_unknown: usize,
    #[arg(long, default_value_t = 8)]
    n_extra: usize,
    #[arg(long, default_value_t = 10)]
    images_per_class: usize,
    #[arg(long, default_value_t = 4)]
    patches_per_image: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    /// Offset every unknown class mean by this much in one common direction.
    #[arg(long, default_value_t = 0.0)]
    unknown_shift: f64,
    #[arg(long, env = "OSBENCH_SEED", default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportGridArgs {
    #[arg(long)]
    model: PathBuf,
    /// Two feature indices, `i,j`.
    #[arg(long, value_parser = parse_pair::<usize>)]
    dims: (usize, usize),
    #[arg(long, value_parser = parse_pair::<f64>, allow_hyphen_values = true)]
    x_range: (f64, f64),
    #[arg(long, value_parser = parse_pair::<f64>, allow_hyphen_values = true)]
    y_range: (f64, f64),
    #[arg(long, default_value_t = 50)]
    resolution: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> std::result::Result<(T, T), String>
where
    T::Err: std::fmt::Display,
{
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected two comma-separated values, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<T>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Extract(a) => extract(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Fuse(a) => fuse(a),
        Command::Synth(a) => synth(a),
        Command::ExportGrid(a) => export_grid(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    entries.sort();
    Ok(entries)
}

fn extract(a: ExtractArgs) -> Result<()> {
    let spec = PatchSpec {
        size: a.patch_size,
        count: a.patches,
    };
    spec.validate()?;
    let config = CooccurrenceConfig {
        step: a.step,
        truncation: a.truncation,
        order: a.order,
        cross_channel: a.cross_channel,
        ..CooccurrenceConfig::default()
    };
    config.validate()?;

    let mut images = Vec::new();
    for class_dir in sorted_entries(&a.images)?
        .into_iter()
        .filter(|p| p.is_dir())
    {
        let class = class_dir
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        for file in sorted_entries(&class_dir)? {
            if file.extension().is_some_and(|e| e == "osim") {
                let stem = file
                    .file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned();
                images.push((class.clone(), format!("{class}/{stem}"), file));
            }
        }
    }
    if images.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no .osim images under {}",
            a.images.display()
        )));
    }
    let registry = ClassRegistry::new(
        images
            .iter()
            .map(|(c, _, _)| c.clone())
            .collect::<std::collections::BTreeSet<_>>(),
    )?;
    let mut samples = Vec::new();
    for (class, image_id, path) in &images {
        let image = read_osim(path)?;
        let label = registry.parse_label(class)?;
        for (index, patch) in extract_patches(&image, &spec)?.iter().enumerate() {
            samples.push(Sample {
                features: extract_features(&patch.pixels, &config)?,
                label,
                image_id: image_id.clone(),
                patch_index: index as u32,
            });
        }
    }
    info!(
        "extracted {} patches from {} images",
        samples.len(),
        images.len()
    );
    let data = Dataset::new(samples, registry, config.output_dim())?;
    save_manifest(&data, &a.out_manifest, &a.out_features)
}

fn split(a: SplitArgs) -> Result<()> {
    let train = load_manifest(&a.manifest)?;
    let extra = match (a.protocol, &a.extra_ku) {
        (Protocol::NetOpen, None) => {
            return Err(Error::InvalidInput(
                "--protocol netopen needs --extra-ku".into(),
            ));
        }
        (Protocol::NetOpen, Some(p)) => Some(load_manifest(p)?),
        (_, Some(_)) => {
            return Err(Error::InvalidInput(
                "--extra-ku only applies to netopen".into(),
            ))
        }
        (_, None) => None,
    };
    let p = plan(a.protocol, &train, extra.as_ref(), a.val_fraction, a.seed)?;
    info!(
        "{} plan: {} fit and {} validation samples, {} known-unknown classes",
        p.protocol,
        p.fit.len(),
        p.validation.len(),
        p.ku_class_names.len()
    );
    let sources = PlanSources {
        train_manifest: Some(a.manifest.display().to_string()),
        extra_ku_manifest: a.extra_ku.map(|p| p.display().to_string()),
    };
    fs::write(&a.out, p.to_document(&sources)).map_err(|e| Error::Io {
        path: a.out,
        source: e,
    })
}

fn load_plans(path: &Path, repetitions: usize) -> Result<Vec<SplitPlan>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let doc = PlanDocument::parse(&text)?;
    let train_path =
        doc.sources.train_manifest.as_ref().ok_or_else(|| {
            Error::InvalidInput("plan does not name its training manifest".into())
        })?;
    let train = load_manifest(Path::new(train_path))?;
    let extra = doc
        .sources
        .extra_ku_manifest
        .as_ref()
        .map(|p| load_manifest(Path::new(p)))
        .transpose()?;
    let mut plans = vec![doc.replay(&train, extra.as_ref())?];
    for r in 1..repetitions {
        let seed = doc.seed.wrapping_add(r as u64);
        plans.push(plan(
            doc.protocol,
            &train,
            extra.as_ref(),
            doc.val_fraction,
            seed,
        )?);
    }
    Ok(plans)
}

fn parse_assignments(items: &[String]) -> Result<BTreeMap<String, f64>> {
    items
        .iter()
        .map(|item| {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("expected key=value, got `{item}`")))?;
            let v = v
                .trim()
                .parse()
                .map_err(|e| Error::InvalidInput(format!("`{item}`: {e}")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn train(a: TrainArgs) -> Result<()> {
    if a.repetitions == 0 {
        return Err(Error::InvalidInput(
            "--repetitions must be at least 1".into(),
        ));
    }
    let variant: Variant = a.classifier.parse()?;
    let fixed = parse_assignments(&a.set)?;
    let mut template = ClassifierSpec::new(variant).with_seed(a.seed);
    template.hyperparams = fixed.clone();
    let plans = load_plans(&a.plan, a.repetitions)?;

    if a.detector {
        let detector = BinaryDetector::fit_plan(&template, &plans[0])?;
        info!("trained {variant} detector");
        return detector.save(&a.out);
    }

    let grid = match &a.grid {
        Some(path) => Grid::load(path)?,
        None => {
            let default = Grid::default_for(variant, plans[0].fit.feature_dim())?;
            let axes: Vec<_> = default
                .axes()
                .iter()
                .filter(|(k, _)| !fixed.contains_key(k))
                .cloned()
                .collect();
            if axes.is_empty() {
                // every axis was fixed: a single-point grid
                let single = fixed.iter().map(|(k, v)| (k.clone(), vec![*v])).collect();
                Grid::new(single, default.selection)?
            } else {
                Grid::new(axes, default.selection)?
            }
        }
    };
    info!(
        "searching {} grid points over {} plan(s)",
        grid.len(),
        plans.len()
    );
    let result = grid_search(&ZooLearner { template }, &plans, &grid, a.jobs)?;
    let chosen: Vec<String> = result
        .best
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    info!(
        "selected {} with validation {} {:.4}",
        chosen.join(" "),
        result.metric,
        result.best_metric
    );
    if let Some(log_path) = &a.log {
        fs::write(log_path, log_to_csv(&grid, &result.log)).map_err(|e| Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
    }
    save_model(&result.final_model, &a.out)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let evaluators = a
        .models
        .iter()
        .map(|p| Evaluator::load(p))
        .collect::<Result<Vec<_>>>()?;
    let test = load_manifest(&a.test)?;
    let evaluation = evaluate(&evaluators, &test, a.mode)?;
    let names: Vec<String> = a.models.iter().map(|p| p.display().to_string()).collect();
    let report = Report::build(
        &evaluation,
        a.granularity,
        &names,
        &a.test.display().to_string(),
        a.allow_partial,
    )?;
    let s = report.section(a.granularity);
    info!(
        "{} {}: NA {:.4} over {} samples",
        a.mode, a.granularity, s.na, s.samples
    );
    report.save(&a.out)?;
    if let Some(dump) = &a.dump {
        write_dump(dump, &evaluation.dump(a.granularity)?)?;
    }
    Ok(())
}

fn fuse(a: FuseArgs) -> Result<()> {
    let dumps = a
        .dumps
        .iter()
        .map(|item| {
            let (name, path) = match item.split_once('=') {
                Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                None => {
                    let p = PathBuf::from(item);
                    (
                        p.file_stem()
                            .unwrap_or_default()
                            .to_string_lossy()
                            .into_owned(),
                        p,
                    )
                }
            };
            Ok((name, read_dump(&path)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let aligned = align_dumps(&dumps)?;
    let config = EnumerationConfig {
        max_size: a.max_size,
        na_floor: a.na_floor,
        force: a.force,
    };
    let run = || {
        enumerate_ensembles(
            &aligned.truths,
            &aligned.models,
            aligned.registry.len(),
            config,
        )
    };
    let ranked = match a.jobs {
        Some(n) => rayon_pool(n)?.install(run)?,
        None => run()?,
    };
    if let Some(best) = ranked.first() {
        info!(
            "{} combinations; best NA {:.4} with {} model(s)",
            ranked.len(),
            best.na,
            best.members.len()
        );
    }
    fs::write(&a.out, ranking_to_csv(&aligned.models, &ranked)).map_err(|e| Error::Io {
        path: a.out,
        source: e,
    })
}

fn rayon_pool(n: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start {n} workers: {e}")))
}

fn synth(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_known: a.n_known,
        n_unknown: a.n_unknown,
        n_extra: a.n_extra,
        images_per_class: a.images_per_class,
        patches_per_image: a.patches_per_image,
        dim: a.dim,
        separation: a.separation,
        unknown_shift: a.unknown_shift,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let bench = generate(&config)?;
    for path in bench.write(&a.out)? {
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn export_grid(a: ExportGridArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let bounds = GridBounds {
        x: a.x_range,
        y: a.y_range,
    };
    let cells = export_decision_grid(&model, a.dims, bounds, a.resolution)?;
    let unknown = cells.iter().filter(|c| c.label == Label::Unknown).count();
    info!("{} cells, {unknown} rejected", cells.len());
    write_decision_grid(&cells, &model, &a.out)
}
