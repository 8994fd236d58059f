use std::collections::BTreeSet;

use fer_core::evaluation::Classifier;
use fer_core::fixture::{generate_fixture, FixtureSpec};
use fer_core::image::StandardImage;
use fer_core::preprocess::{normalize, NormalizationScheme};
use fer_core::DatasetManifest;
use fer_nets::backbones::BackboneKind;
use fer_nets::classifier::{snapshot_by_layer, ClassifierModel, FineTuner, Stage, TrainRunConfig};
use fer_nets::error::Error;
use fer_nets::weights::WeightSource;

fn fixture(per_class: usize, seed: u64) -> (tempfile::TempDir, DatasetManifest) {
    let dir = tempfile::tempdir().unwrap();
    let spec = FixtureSpec {
        images_per_class: per_class,
        seed,
        ..FixtureSpec::default()
    };
    let m = generate_fixture(&spec, dir.path()).unwrap();
    (dir, m)
}

fn surrogate(seed: u64) -> ClassifierModel {
    ClassifierModel::assemble(BackboneKind::Surrogate, &WeightSource::Random { seed: 7 }, seed).unwrap()
}

fn tiny_cfg() -> TrainRunConfig {
    TrainRunConfig {
        stage1_epochs: 1,
        stage2_epochs: 1,
        batch_size: 8,
        ..TrainRunConfig::default()
    }
}

fn load_images(m: &DatasetManifest) -> Vec<StandardImage> {
    m.records()
        .iter()
        .map(|r| StandardImage::load(&r.path).unwrap())
        .collect()
}

fn assert_simplex(rows: &[[f32; 7]]) {
    for row in rows {
        assert!(row.iter().all(|&p| p >= 0.0));
        let s: f64 = row.iter().map(|&p| p as f64).sum();
        assert!((s - 1.0).abs() <= 1e-6, "row sums to {s}");
    }
}

#[test]
fn predictions_are_probability_vectors() {
    let (_d, m) = fixture(2, 0);
    let model = surrogate(1);
    let images = load_images(&m);
    let p = model.predict(&images[..1]).unwrap();
    assert_eq!(p.len(), 1);
    assert_simplex(&p);
    let all = model.predict(&images).unwrap();
    assert_eq!(all.len(), 14);
    assert_simplex(&all);
    let constant = model.predict(&[StandardImage::filled([90.0, 90.0, 90.0])]).unwrap();
    assert_simplex(&constant);
}

#[test]
fn inference_is_deterministic_and_permutation_equivariant() {
    let (_d, m) = fixture(2, 3);
    let model = surrogate(2);
    let images = load_images(&m);
    let dup = model.predict(&[images[0].clone(), images[0].clone()]).unwrap();
    assert_eq!(dup[0], dup[1]);

    let perm = [5usize, 0, 13, 2, 9, 7, 1];
    let picked: Vec<_> = perm.iter().map(|&i| images[i].clone()).collect();
    let forward = model.predict(&picked).unwrap();
    let mut reversed = picked.clone();
    reversed.reverse();
    let backward = model.predict(&reversed).unwrap();
    for (i, row) in forward.iter().enumerate() {
        let other = backward[perm.len() - 1 - i];
        for (a, b) in row.iter().zip(other) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }
    assert_eq!(forward, model.predict(&picked).unwrap());
}

#[test]
fn normalization_scheme_is_checked_at_the_boundary() {
    let model = surrogate(0);
    let img = StandardImage::filled([10.0, 20.0, 30.0]);
    let wrong = normalize(img.as_pixels(), NormalizationScheme::BgrMeanCentered);
    assert!(matches!(model.predict_normalized(&[wrong]), Err(Error::Input(_))));
    let mut short = normalize(img.as_pixels(), NormalizationScheme::UnitInterval);
    short.data.truncate(100);
    assert!(matches!(model.predict_normalized(&[short]), Err(Error::Input(_))));
}

#[test]
fn vgg16_assembles_and_predicts() {
    let model = ClassifierModel::assemble(BackboneKind::Vgg16, &WeightSource::Random { seed: 0 }, 0).unwrap();
    assert_eq!(model.graph().total_params(), 14_714_688);
    assert_eq!(model.total_params(), 14_714_688 + 512 * 256 + 256 + 256 * 7 + 7);
    let unit = normalize(
        StandardImage::filled([1.0, 2.0, 3.0]).as_pixels(),
        NormalizationScheme::UnitInterval,
    );
    assert!(matches!(model.predict_normalized(&[unit]), Err(Error::Input(_))));
    let a = StandardImage::new(fer_core::image::PixelImage::from_fn(224, 224, |x, y| {
        [(x % 256) as f32, (y % 256) as f32, ((x + y) % 256) as f32]
    }))
    .unwrap();
    let p = model.predict(&[a, StandardImage::filled([128.0, 64.0, 32.0])]).unwrap();
    assert_eq!(p.len(), 2);
    assert_simplex(&p);
}

#[test]
fn stage_one_freezes_backbone_stage_two_changes_exactly_last_k() {
    let (_d, m) = fixture(4, 1);
    let mut model = surrogate(5);
    let pretrained = snapshot_by_layer(model.backbone_params()).unwrap();
    let head_before = model.head_params().snapshot().unwrap();
    let cfg = tiny_cfg();

    model.fit_stage(&m, &cfg, Stage::HeadOnly).unwrap();
    assert_eq!(model.stage(), Stage::HeadOnly);
    assert_eq!(snapshot_by_layer(model.backbone_params()).unwrap(), pretrained);
    assert_ne!(model.head_params().snapshot().unwrap(), head_before);

    model.fit_stage(&m, &cfg, Stage::PartialUnfrozen).unwrap();
    let after = snapshot_by_layer(model.backbone_params()).unwrap();
    let changed: BTreeSet<String> = after
        .iter()
        .filter(|(layer, v)| pretrained[*layer] != **v)
        .map(|(l, _)| l.clone())
        .collect();
    let expected: BTreeSet<String> = model
        .unfrozen_layers()
        .into_iter()
        .filter(|l| l.trainable_params > 0)
        .map(|l| l.name)
        .collect();
    assert_eq!(changed, expected);
    assert!(!expected.is_empty());
}

#[test]
fn training_log_records_every_epoch_and_the_boundary() {
    let (_d, m) = fixture(2, 2);
    let mut model = surrogate(0);
    let cfg = TrainRunConfig {
        stage1_epochs: 2,
        stage2_epochs: 3,
        batch_size: 5,
        seed: 4,
        ..TrainRunConfig::default()
    };
    let log = model.fit_two_stage(&m, &cfg).unwrap();
    assert_eq!(log.epochs.len(), 5);
    assert_eq!(log.epochs.iter().filter(|e| e.stage == Stage::HeadOnly).count(), 2);
    assert!(log
        .epochs
        .iter()
        .all(|e| e.loss.is_finite() && (0.0..=1.0).contains(&e.accuracy)));
    let names: Vec<_> = log.unfrozen.iter().map(|l| l.name.as_str()).collect();
    assert_eq!(names, ["bn2", "act2", "pool2", "conv3"]);
    assert_eq!(log.unfrozen[0].position, 5);
    assert_eq!(model.meta().dataset, "FIXTURE");
}

#[test]
fn smoke_run_beats_chance_on_training_data() {
    let (_d, m) = fixture(20, 0);
    let mut model = surrogate(0);
    let cfg = TrainRunConfig {
        stage1_epochs: 2,
        stage2_epochs: 2,
        ..TrainRunConfig::default()
    };
    let log = model.fit_two_stage(&m, &cfg).unwrap();
    let last = log.epochs.last().unwrap();
    println!("final training accuracy {:.3}", last.accuracy);
    assert!(last.accuracy > 1.0 / 7.0, "{last:?}");
}

#[test]
fn training_is_reproducible_per_seed() {
    let (_d, m) = fixture(2, 5);
    let run = |seed| {
        let mut model = surrogate(seed);
        let log = model.fit_two_stage(&m, &TrainRunConfig { seed, ..tiny_cfg() }).unwrap();
        (log.epochs, model.head_params().snapshot().unwrap())
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3).1, run(4).1);
}

#[test]
fn empty_manifest_and_bad_config_are_rejected() {
    let mut model = surrogate(0);
    let empty = DatasetManifest::empty("EMPTY");
    assert!(matches!(
        model.fit_two_stage(&empty, &tiny_cfg()),
        Err(Error::Config(_))
    ));
    let (_d, m) = fixture(1, 0);
    let bad = TrainRunConfig {
        stage2_lr: 0.0,
        batch_size: 0,
        ..tiny_cfg()
    };
    assert_eq!(bad.violations().len(), 2);
    assert!(matches!(model.fit_two_stage(&m, &bad), Err(Error::Config(_))));
}

#[test]
fn non_finite_loss_aborts() {
    // An absurd learning rate drives the head weights to overflow.
    let (_d, m) = fixture(2, 0);
    let mut model = surrogate(0);
    let cfg = TrainRunConfig {
        stage1_lr: 1e30,
        stage1_epochs: 5,
        batch_size: 2,
        ..tiny_cfg()
    };
    let err = model.fit_two_stage(&m, &cfg).map(|_| ()).unwrap_err();
    assert!(
        matches!(
            err,
            Error::NonFinite {
                what: "classification",
                ..
            }
        ),
        "{err}"
    );
    println!("{err}");
}

#[test]
fn saved_models_round_trip_with_metadata() {
    let (_d, m) = fixture(2, 0);
    let out = tempfile::tempdir().unwrap();
    let trainer = FineTuner {
        weights: WeightSource::Random { seed: 7 },
        config: tiny_cfg(),
        artifacts: Some(out.path().to_path_buf()),
    };
    let (model, _) = trainer.fit("surrogate", &m, 11).unwrap();
    let stem = FineTuner::artifact_stem("FIXTURE", "surrogate", 11);
    let loaded = ClassifierModel::load(&out.path().join(format!("{stem}.safetensors"))).unwrap();
    assert!(out.path().join(format!("{stem}.json")).exists());
    assert_eq!(loaded.meta(), model.meta());
    assert_eq!(loaded.meta().seed, 11);
    assert_eq!(loaded.meta().unfreeze_depth, 4);
    assert!(!loaded.meta().config_digest.is_empty());
    let a = model.predict_records(m.records()).unwrap();
    let b = loaded.predict_records(m.records()).unwrap();
    assert_eq!(a, b);
}
