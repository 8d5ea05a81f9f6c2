//! Synthetic open-set benchmark: Gaussian class "fingerprints".
//!
//! Every class has a mean on the sphere of radius `separation`. Patches are
//! the class mean plus an image-level offset of fixed magnitude (shared by
//! the patches of one image) plus unit Gaussian noise, rounded to `f32` so
//! datasets survive the feature file unchanged.
//!
//! Draw order from `Rng::new(seed)`: known means, unknown means, extra
//! known-unknown means, then the unknown shift (only when nonzero), then
//! samples for train, test known, test unknown and extra, class by class,
//! image by image (offset first, then its patches).

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{save_manifest, ClassRegistry, Dataset, Label, Sample};
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_known: usize,
    pub n_unknown: usize,
    /// Classes set aside as known-unknowns for the NETOPEN protocol.
    pub n_extra: usize,
    pub images_per_class: usize,
    pub patches_per_image: usize,
    pub dim: usize,
    pub separation: f64,
    pub image_offset: f64,
    /// Length of a common offset added to every unknown class mean; moves the
    /// unknowns away from the family the other classes come from.
    pub unknown_shift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_known: 10,
            n_unknown: 8,
            n_extra: 8,
            images_per_class: 10,
            patches_per_image: 4,
            dim: 16,
            separation: 10.0,
            image_offset: 0.3,
            unknown_shift: 0.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if self.n_known < 2 {
            return bad("synthetic benchmark needs at least two known classes");
        }
        if self.images_per_class < 2 || self.patches_per_image < 1 || self.dim < 1 {
            return bad("need at least 2 images per class, 1 patch per image and dimension 1");
        }
        if !(self.separation.is_finite() && self.separation >= 0.0)
            || !(self.image_offset.is_finite() && self.image_offset >= 0.0)
            || !(self.unknown_shift.is_finite() && self.unknown_shift >= 0.0)
        {
            return bad(
                "separation, image offset and unknown shift must be finite and non-negative",
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBenchmark {
    pub train: Dataset,
    /// Known and unknown test images together.
    pub test: Dataset,
    pub test_known: Dataset,
    pub test_unknown: Dataset,
    pub extra_ku: Dataset,
}

pub fn known_name(i: usize) -> String {
    format!("cam_k{i:02}")
}

pub fn unknown_name(i: usize) -> String {
    format!("unk_u{i:02}")
}

pub fn extra_name(i: usize) -> String {
    format!("ku_e{i:02}")
}

fn draw(
    rng: &mut Rng,
    config: &SynthConfig,
    means: &[Vec<f64>],
    names: &[String],
    tag: &str,
) -> Vec<(String, Vec<Sample>)> {
    means
        .iter()
        .zip(names)
        .enumerate()
        .map(|(c, (mean, name))| {
            let mut samples =
                Vec::with_capacity(config.images_per_class * config.patches_per_image);
            for img in 0..config.images_per_class {
                let offset = rng.on_sphere(config.dim, config.image_offset);
                for p in 0..config.patches_per_image {
                    let features = mean
                        .iter()
                        .zip(&offset)
                        .map(|(m, o)| f64::from((m + o + rng.normal()) as f32))
                        .collect();
                    samples.push(Sample {
                        features,
                        label: Label::Known(c),
                        image_id: format!("{name}/{tag}{img:03}"),
                        patch_index: p as u32,
                    });
                }
            }
            (name.clone(), samples)
        })
        .collect()
}

fn assemble(dim: usize, parts: &[&[(String, Vec<Sample>)]]) -> Result<Dataset> {
    let names: Vec<String> = parts
        .iter()
        .flat_map(|p| p.iter().map(|(n, _)| n.clone()))
        .collect();
    let registry = ClassRegistry::new(names)?;
    let mut samples = Vec::new();
    for (name, class_samples) in parts.iter().flat_map(|p| p.iter()) {
        let id = registry.id(name).expect("registered above");
        samples.extend(class_samples.iter().cloned().map(|mut s| {
            s.label = Label::Known(id);
            s
        }));
    }
    Dataset::new(samples, registry, dim)
}

pub fn generate(config: &SynthConfig) -> Result<SynthBenchmark> {
    config.validate()?;
    let mut rng = Rng::new(config.seed);
    let mut means = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| rng.on_sphere(config.dim, config.separation))
            .collect()
    };
    let known_means = means(config.n_known);
    let mut unknown_means = means(config.n_unknown);
    let extra_means = means(config.n_extra);
    if config.unknown_shift > 0.0 {
        let shift = rng.on_sphere(config.dim, config.unknown_shift);
        for m in &mut unknown_means {
            m.iter_mut().zip(&shift).for_each(|(v, s)| *v += s);
        }
    }

    let known: Vec<String> = (0..config.n_known).map(known_name).collect();
    let unknown: Vec<String> = (0..config.n_unknown).map(unknown_name).collect();
    let extra: Vec<String> = (0..config.n_extra).map(extra_name).collect();
    let train = draw(&mut rng, config, &known_means, &known, "train");
    let test_known = draw(&mut rng, config, &known_means, &known, "test");
    let test_unknown = draw(&mut rng, config, &unknown_means, &unknown, "test");
    let extra_ku = draw(&mut rng, config, &extra_means, &extra, "extra");

    let d = config.dim;
    Ok(SynthBenchmark {
        train: assemble(d, &[&train])?,
        test: assemble(d, &[&test_known, &test_unknown])?,
        test_known: assemble(d, &[&test_known])?,
        test_unknown: assemble(d, &[&test_unknown])?,
        extra_ku: assemble(d, &[&extra_ku])?,
    })
}

impl SynthBenchmark {
    /// Writes `<part>.manifest` and `<part>.osfv` for every part into `dir`,
    /// returning the manifest paths in part order.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.parts()
            .into_iter()
            .map(|(name, data)| {
                let manifest = dir.join(format!("{name}.manifest"));
                save_manifest(data, &manifest, &dir.join(format!("{name}.osfv")))?;
                Ok(manifest)
            })
            .collect()
    }

    pub fn parts(&self) -> [(&'static str, &Dataset); 5] {
        [
            ("train", &self.train),
            ("test", &self.test),
            ("test_known", &self.test_known),
            ("test_unknown", &self.test_unknown),
            ("extra_ku", &self.extra_ku),
        ]
    }
}
