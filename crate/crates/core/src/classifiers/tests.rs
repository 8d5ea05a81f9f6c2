use super::*;
use crate::data::Sample;
use crate::numerics::Rng;
use proptest::prelude::*;

fn dataset_from(points: Vec<(Vec<f64>, usize)>, names: &[&str]) -> Dataset {
    let registry = ClassRegistry::new(names.iter().copied()).unwrap();
    let dim = points[0].0.len();
    let samples = points
        .into_iter()
        .enumerate()
        .map(|(i, (features, c))| Sample {
            features,
            label: Label::Known(c),
            image_id: format!("img{i:04}"),
            patch_index: 0,
        })
        .collect();
    Dataset::new(samples, registry, dim).unwrap()
}

/// Gaussian blobs with unit noise around means spaced `sep` apart on the axes.
fn blobs(classes: usize, per_class: usize, dim: usize, sep: f64, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let mut points = Vec::new();
    for c in 0..classes {
        for _ in 0..per_class {
            let x = (0..dim)
                .map(|k| if k == c % dim { sep * (1 + c / dim) as f64 } else { 0.0 } + rng.normal())
                .collect();
            points.push((x, c));
        }
    }
    let names: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    dataset_from(points, &refs)
}

fn spec_for(variant: Variant, threshold: f64) -> ClassifierSpec {
    let s = ClassifierSpec::new(variant).with_seed(3);
    match variant {
        Variant::Osnn => s.with("T", threshold),
        Variant::SvmOva => s.with("C", 1.0).with("gamma", 0.25),
        Variant::Psvm => s.with("C", 1.0).with("gamma", 0.25).with("tau", threshold),
        Variant::Softmax => s
            .with("l2", 1e-3)
            .with("lr", 0.1)
            .with("epochs", 50.0)
            .with("tau", threshold),
        Variant::Ncm => s.with("tau", threshold),
        Variant::Et => s.with("tau", threshold).with("M", 20.0),
        Variant::OccPerClass => s.with("nu", 0.1).with("gamma", 0.25),
        Variant::TwoStage => s
            .with("nu", 0.1)
            .with("C", 1.0)
            .with("gamma", 0.25)
            .with("tau", threshold),
        Variant::Pisvm => s
            .with("C", 1.0)
            .with("gamma", 0.25)
            .with("delta", threshold),
        _ => s,
    }
}

const IMPLEMENTED: [Variant; 9] = [
    Variant::Osnn,
    Variant::SvmOva,
    Variant::Psvm,
    Variant::Softmax,
    Variant::Ncm,
    Variant::Et,
    Variant::OccPerClass,
    Variant::TwoStage,
    Variant::Pisvm,
];

#[test]
fn variant_names_parse() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert_eq!("pi-svm".parse::<Variant>().unwrap(), Variant::Pisvm);
    assert_eq!("W-SVM".parse::<Variant>().unwrap(), Variant::Wsvm);
    assert!("LDA".parse::<Variant>().is_err());
}

#[test]
fn stubs_refuse_to_fit() {
    let data = blobs(2, 5, 2, 5.0, 1);
    for v in [Variant::Wsvm, Variant::Dbc, Variant::Ssvm] {
        assert!(matches!(
            fit(&ClassifierSpec::new(v), &data),
            Err(Error::UnimplementedVariant(_))
        ));
    }
}

#[test]
fn missing_hyperparameters_are_reported() {
    let data = blobs(2, 5, 2, 5.0, 1);
    let spec = ClassifierSpec::new(Variant::Softmax)
        .with("l2", 0.0)
        .with("epochs", 5.0)
        .with("tau", 0.5);
    assert!(matches!(
        fit(&spec, &data),
        Err(Error::MissingHyperparameter { key: "lr", .. })
    ));
    let bad = ClassifierSpec::new(Variant::Osnn).with("T", 1.5);
    assert!(matches!(fit(&bad, &data), Err(Error::InvalidInput(_))));
}

#[test]
fn multi_class_variants_need_two_classes() {
    let one = blobs(1, 6, 2, 5.0, 1);
    assert!(fit(&spec_for(Variant::Osnn, 0.5), &one).is_err());
    assert!(fit(&spec_for(Variant::OccPerClass, 0.0), &one).is_ok());
}

#[test]
fn every_variant_memorizes_training_points() {
    let data = blobs(3, 12, 3, 8.0, 2);
    for v in IMPLEMENTED {
        let wide = match v {
            Variant::Osnn => 0.999,
            _ => 0.0,
        };
        let model = fit(&spec_for(v, wide), &data).unwrap();
        let correct = data
            .samples()
            .iter()
            .filter(|s| model.predict(&s.features).unwrap() == s.label)
            .count();
        let need = if matches!(v, Variant::OccPerClass | Variant::TwoStage) {
            0.8
        } else {
            1.0
        };
        assert!(
            correct as f64 >= need * data.len() as f64,
            "{v}: {correct} of {} training points",
            data.len()
        );
    }
}

#[test]
fn osnn_rejects_far_collinear_query() {
    let data = dataset_from(
        vec![
            (vec![0.0], 0),
            (vec![0.2], 0),
            (vec![1.0], 1),
            (vec![1.2], 1),
        ],
        &["a", "b"],
    );
    let model = fit(&ClassifierSpec::new(Variant::Osnn).with("T", 0.9), &data).unwrap();
    assert_eq!(model.predict(&[1e6]).unwrap(), Label::Unknown);
    assert_eq!(model.predict(&[1.1]).unwrap(), Label::Known(1));
    // equidistant between the two classes
    let sym = dataset_from(vec![(vec![-1.0], 0), (vec![1.0], 1)], &["a", "b"]);
    let m = fit(&ClassifierSpec::new(Variant::Osnn).with("T", 0.99), &sym).unwrap();
    assert_eq!(m.predict(&[0.0]).unwrap(), Label::Unknown);
    assert_eq!(m.score(&[0.0]).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn svm_ova_builds_one_machine_per_class_and_rejects_all_negative() {
    let data = blobs(3, 10, 3, 6.0, 4);
    let model = fit(&spec_for(Variant::SvmOva, 0.0), &data).unwrap();
    let Fitted::Ova(ova) = &model.fitted else {
        panic!("not OVA")
    };
    assert_eq!(ova.machines.len(), 3);
    assert_eq!(model.decide(&[-0.1, -2.0, -0.5]), Label::Unknown);
    assert_eq!(model.decide(&[-0.1, 0.3, 0.2]), Label::Known(1));
    assert_eq!(model.decide(&[0.0, 0.0, 0.0]), Label::Unknown);
}

#[test]
fn score_ranges() {
    let data = blobs(3, 10, 3, 6.0, 5);
    let soft = fit(&spec_for(Variant::Softmax, 0.5), &data).unwrap();
    let pisvm = fit(&spec_for(Variant::Pisvm, 0.5), &data).unwrap();
    let ncm = fit(&spec_for(Variant::Ncm, 0.5), &data).unwrap();
    let mut rng = Rng::new(6);
    for _ in 0..200 {
        let q: Vec<f64> = (0..3).map(|_| rng.uniform_in(-20.0, 20.0)).collect();
        let s = soft.score(&q).unwrap();
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(pisvm
            .score(&q)
            .unwrap()
            .iter()
            .all(|p| (0.0..=1.0).contains(p)));
    }
    for c in 0..3 {
        let rows: Vec<&Sample> = data
            .samples()
            .iter()
            .filter(|s| s.label == Label::Known(c))
            .collect();
        let mean: Vec<f64> = (0..3)
            .map(|k| rows.iter().map(|s| s.features[k]).sum::<f64>() / rows.len() as f64)
            .collect();
        let s = ncm.score(&mean).unwrap();
        assert_eq!(argmax(&s), Some(c));
        assert!(s.iter().enumerate().all(|(i, &v)| i == c || v < s[c]));
    }
}

#[test]
fn dimension_is_checked() {
    let data = blobs(2, 5, 3, 5.0, 1);
    let model = fit(&spec_for(Variant::Ncm, 0.5), &data).unwrap();
    assert!(matches!(
        model.predict(&[0.0; 2]),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(model.score(&[0.0; 4]).is_err());
}

#[test]
fn fitting_is_deterministic_and_files_round_trip() {
    let data = blobs(3, 8, 4, 5.0, 7);
    let mut rng = Rng::new(8);
    let queries: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..4).map(|_| rng.uniform_in(-10.0, 15.0)).collect())
        .collect();
    for v in IMPLEMENTED {
        let spec = spec_for(v, 0.5);
        let a = fit(&spec, &data).unwrap();
        let b = fit(&spec, &data).unwrap();
        assert_eq!(a.to_document(), b.to_document(), "{v}");
        let back = TrainedModel::from_document(&a.to_document()).unwrap();
        assert_eq!(back, a, "{v}");
        for q in &queries {
            let (s1, s2) = (a.score(q).unwrap(), back.score(q).unwrap());
            assert_eq!(
                s1.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                s2.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
            assert_eq!(a.predict(q).unwrap(), back.predict(q).unwrap());
        }
    }
}

#[test]
fn corrupt_model_files_are_rejected() {
    let data = blobs(2, 6, 2, 5.0, 1);
    let doc = fit(&spec_for(Variant::Ncm, 0.5), &data)
        .unwrap()
        .to_document();
    assert!(TrainedModel::from_document(&doc.replace("osbench_model_v1", "v0")).is_err());
    assert!(TrainedModel::from_document(&doc.replace("\"len\": 2", "\"len\": 3")).is_err());
    assert!(TrainedModel::from_document("{}").is_err());
}

#[test]
fn save_and_load_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let data = blobs(2, 6, 2, 5.0, 1);
    let model = fit(&spec_for(Variant::Psvm, 0.5), &data).unwrap();
    save_model(&model, &path).unwrap();
    assert_eq!(load_model(&path).unwrap(), model);
    assert!(load_model(&dir.path().join("missing.json")).is_err());
}

#[test]
fn threshold_changes_share_the_fit() {
    let data = blobs(2, 8, 2, 5.0, 9);
    let model = fit(&spec_for(Variant::Pisvm, 0.2), &data).unwrap();
    let strict = model.with_threshold(0.9).unwrap();
    assert_eq!(strict.spec().hyperparams["delta"], 0.9);
    assert_eq!(strict.rejection(), Rejection::AtLeast(0.9));
    assert_eq!(
        strict.to_document(),
        fit(&spec_for(Variant::Pisvm, 0.9), &data)
            .unwrap()
            .to_document()
    );
    assert!(fit(&spec_for(Variant::SvmOva, 0.0), &data)
        .unwrap()
        .with_threshold(0.5)
        .is_err());
}

#[test]
fn binary_detector_separates_blobs() {
    let known = blobs(2, 15, 2, 6.0, 10);
    let mut rng = Rng::new(11);
    let ku = dataset_from(
        (0..15)
            .map(|_| (vec![-8.0 + rng.normal(), -8.0 + rng.normal()], 0))
            .collect(),
        &["outsider"],
    );
    for kind in [DetectorKind::Psvm, DetectorKind::Et] {
        let spec = spec_for(kind.variant(), 0.5);
        let det = BinaryDetector::fit(&spec, &known, &ku).unwrap();
        assert!(!det.detect(&[-8.0, -8.0]).unwrap());
        assert!(det.detect(&[6.0, 0.0]).unwrap());
        let back = BinaryDetector::from_document(&det.to_document()).unwrap();
        assert_eq!(back, det);
    }
    let empty = known.filter(|_| false);
    assert!(BinaryDetector::fit(&spec_for(Variant::Psvm, 0.5), &known, &empty).is_err());
    assert!(BinaryDetector::fit(&spec_for(Variant::Ncm, 0.5), &known, &ku).is_err());
}

#[test]
fn decision_grid_shapes_and_regions() {
    let data = dataset_from(
        vec![
            (vec![0.0, 0.0], 0),
            (vec![0.1, 0.0], 0),
            (vec![10.0, 10.0], 1),
            (vec![10.0, 10.1], 1),
        ],
        &["a", "b"],
    );
    let osnn = fit(&ClassifierSpec::new(Variant::Osnn).with("T", 0.05), &data).unwrap();
    let cells = export_decision_grid(
        &osnn,
        (0, 1),
        GridBounds {
            x: (0.0, 1.0),
            y: (0.0, 1.0),
        },
        2,
    )
    .unwrap();
    assert_eq!(cells.len(), 4);
    assert_eq!((cells[1].x, cells[1].y), (1.0, 0.0));
    let cells = export_decision_grid(
        &osnn,
        (0, 1),
        GridBounds {
            x: (-100.0, 100.0),
            y: (-100.0, 100.0),
        },
        21,
    )
    .unwrap();
    let at = |x: f64, y: f64| cells.iter().find(|c| c.x == x && c.y == y).unwrap().label;
    assert_eq!(at(0.0, 0.0), Label::Known(0));
    assert_eq!(at(10.0, 10.0), Label::Known(1));
    for (x, y) in [
        (-100.0, -100.0),
        (100.0, 100.0),
        (-100.0, 100.0),
        (100.0, -100.0),
    ] {
        assert_eq!(at(x, y), Label::Unknown);
    }
    assert!(export_decision_grid(
        &osnn,
        (0, 0),
        GridBounds {
            x: (0.0, 1.0),
            y: (0.0, 1.0)
        },
        3
    )
    .is_err());
    assert!(export_decision_grid(
        &osnn,
        (0, 2),
        GridBounds {
            x: (0.0, 1.0),
            y: (0.0, 1.0)
        },
        3
    )
    .is_err());

    let blobs3 = blobs(3, 10, 2, 6.0, 12);
    let soft = fit(&spec_for(Variant::Softmax, 0.0), &blobs3).unwrap();
    let cells = export_decision_grid(
        &soft,
        (0, 1),
        GridBounds {
            x: (-50.0, 50.0),
            y: (-50.0, 50.0),
        },
        15,
    )
    .unwrap();
    assert!(cells.iter().all(|c| c.label.is_known()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.csv");
    write_decision_grid(&cells, &soft, &path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), 1 + 15 * 15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn predict_is_rule_of_score_and_thresholds_are_monotone(seed in 0u64..500) {
        let data = blobs(3, 8, 3, 4.0, seed);
        let mut rng = Rng::new(seed ^ 0xABCD);
        let queries: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.uniform_in(-8.0, 14.0)).collect()).collect();
        for v in [Variant::Psvm, Variant::Softmax, Variant::Ncm, Variant::Et, Variant::Pisvm, Variant::Osnn, Variant::TwoStage] {
            let base = fit(&spec_for(v, 0.05), &data).unwrap();
            let sweep: Vec<TrainedModel> = [0.05, 0.2, 0.4, 0.6, 0.8, 0.95].iter().map(|&t| base.with_threshold(t).unwrap()).collect();
            for q in &queries {
                let mut previous: Option<Label> = None;
                for m in &sweep {
                    let label = m.predict(q).unwrap();
                    prop_assert_eq!(label, m.decide(&m.score(q).unwrap()));
                    if v != Variant::Osnn {
                        if let Some(prev) = previous {
                            prop_assert!(!(prev == Label::Unknown && label.is_known()), "{} flipped to known", v);
                            if label.is_known() {
                                prop_assert_eq!(label, prev);
                            }
                        }
                    }
                    previous = Some(label);
                }
            }
        }
    }

    #[test]
    fn osnn_is_scale_invariant(seed in 0u64..1000, power in -6i32..8) {
        let data = blobs(3, 6, 2, 3.0, seed);
        let c = 2f64.powi(power);
        let scaled = Dataset::new(
            data.samples().iter().map(|s| Sample { features: s.features.iter().map(|x| x * c).collect(), ..s.clone() }).collect(),
            data.registry().clone(),
            2,
        ).unwrap();
        let spec = ClassifierSpec::new(Variant::Osnn).with("T", 0.7);
        let (a, b) = (fit(&spec, &data).unwrap(), fit(&spec, &scaled).unwrap());
        let mut rng = Rng::new(seed + 1);
        for _ in 0..30 {
            let q: Vec<f64> = (0..2).map(|_| rng.uniform_in(-5.0, 10.0)).collect();
            let qs: Vec<f64> = q.iter().map(|x| x * c).collect();
            prop_assert_eq!(a.predict(&q).unwrap(), b.predict(&qs).unwrap());
        }
    }
}
