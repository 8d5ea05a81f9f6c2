//! Inputs shared by the benchmarks.

use osbench_core::data::Label;
use osbench_core::features::RgbImage;
use osbench_core::fusion::ModelPredictions;
use osbench_core::numerics::Rng;

/// A noisy gradient patch, the kind of texture the feature extractor sees.
pub fn textured_patch(size: usize, seed: u64) -> RgbImage {
    let mut rng = Rng::new(seed);
    RgbImage::from_fn(size, size, |y, x, c| {
        let base = (x * 3 + y * 2 + c * 40) % 200;
        (base + rng.below(56)) as u8
    })
}

/// Two Gaussian clouds in `dim` dimensions, labelled ±1.
pub fn two_clouds(per_side: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = Rng::new(seed);
    let centre = rng.on_sphere(dim, 2.0);
    let mut points = Vec::with_capacity(2 * per_side);
    let mut labels = Vec::with_capacity(2 * per_side);
    for side in [1.0, -1.0] {
        for _ in 0..per_side {
            points.push(centre.iter().map(|m| side * m + rng.normal()).collect());
            labels.push(side);
        }
    }
    (points, labels)
}

/// Ground truth over `n_classes` plus unknown, and `models` noisy copies of it.
pub fn noisy_predictions(
    samples: usize,
    n_classes: usize,
    models: usize,
    error_rate: f64,
    seed: u64,
) -> (Vec<Label>, Vec<ModelPredictions>) {
    let mut rng = Rng::new(seed);
    let draw = |rng: &mut Rng| match rng.below(n_classes + 1) {
        c if c == n_classes => Label::Unknown,
        c => Label::Known(c),
    };
    let truths: Vec<Label> = (0..samples).map(|_| draw(&mut rng)).collect();
    let models = (0..models)
        .map(|m| ModelPredictions {
            name: format!("m{m}"),
            predictions: truths
                .iter()
                .map(|&t| {
                    if rng.uniform() < error_rate {
                        draw(&mut rng)
                    } else {
                        t
                    }
                })
                .collect(),
        })
        .collect();
    (truths, models)
}
