use std::time::Instant;

use fer_core::fixture::{generate_fixture, FixtureSpec};
use fer_core::image::{PixelImage, StandardImage};
use fer_core::preprocess::{normalize, NormalizationScheme};
use fer_core::{DatasetManifest, EmotionLabel, Source};
use fer_nets::dcgan::{sample, to_images, train, CheckpointPolicy, Dcgan, DcganCheckpoint, DcganSpec, GanTrainConfig};
use fer_nets::error::Error;
use proptest::prelude::*;

fn group(per_class: usize) -> (tempfile::TempDir, DatasetManifest) {
    let dir = tempfile::tempdir().unwrap();
    let spec = FixtureSpec {
        images_per_class: per_class,
        ..FixtureSpec::default()
    };
    let m = generate_fixture(&spec, dir.path()).unwrap();
    let g = m.filter("GAN_GROUP_HAPPY", |r| r.label == EmotionLabel::Happy);
    (dir, g)
}

fn max_abs(t: &candle_core::Tensor) -> f32 {
    t.abs()
        .unwrap()
        .flatten_all()
        .unwrap()
        .max(0)
        .unwrap()
        .to_scalar::<f32>()
        .unwrap()
}

#[test]
fn full_spec_shapes_and_ranges() {
    let spec = DcganSpec::default();
    let gan = Dcgan::build(&spec, 0).unwrap();
    let out = gan.generate(&gan.noise(4, 1).unwrap()).unwrap();
    assert_eq!(out.dims(), &[4, 3, 224, 224]);
    assert!(max_abs(&out) <= 1.0);
    let images = to_images(&out).unwrap();
    assert_eq!(images.len(), 4);
    assert!(images
        .iter()
        .all(|i| i.width == 224 && i.height == 224 && i.data.len() == 224 * 224 * 3));

    let p = gan.discriminate(&out).unwrap();
    assert_eq!(p.dims(), &[4, 1]);
    for v in p.flatten_all().unwrap().to_vec1::<f32>().unwrap() {
        assert!(v > 0.0 && v < 1.0, "{v}");
    }
}

#[test]
fn freezing_contract_per_step() {
    for variant in [false, true] {
        let spec = DcganSpec {
            batch_norm_variant: variant,
            ..DcganSpec::reduced()
        };
        let mut gan = Dcgan::build(&spec, 3).unwrap();
        let real = gan.generate(&gan.noise(4, 10).unwrap()).unwrap();
        for step in 0..3u64 {
            let g_before = gan.generator_params().snapshot().unwrap();
            let d_before = gan.discriminator_params().snapshot().unwrap();
            gan.discriminator_step(&real, &gan.noise(4, 100 + step).unwrap())
                .unwrap();
            assert_eq!(gan.generator_params().snapshot().unwrap(), g_before);
            assert_ne!(gan.discriminator_params().snapshot().unwrap(), d_before);

            let d_before = gan.discriminator_params().snapshot().unwrap();
            let g_before = gan.generator_params().snapshot().unwrap();
            gan.generator_step(&gan.noise(4, 200 + step).unwrap()).unwrap();
            assert_eq!(gan.discriminator_params().snapshot().unwrap(), d_before);
            assert_ne!(gan.generator_params().snapshot().unwrap(), g_before);
        }
    }
}

#[test]
fn first_step_losses_are_deterministic() {
    let spec = DcganSpec::reduced();
    let run = |seed| {
        let mut gan = Dcgan::build(&spec, seed).unwrap();
        let real = gan.generate(&gan.noise(4, 5).unwrap()).unwrap();
        let d = gan.discriminator_step(&real, &gan.noise(4, 6).unwrap()).unwrap();
        let g = gan.generator_step(&gan.noise(4, 7).unwrap()).unwrap();
        (d.to_bits(), g.to_bits())
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generator_output_stays_in_unit_range(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let gan = Dcgan::build(&DcganSpec::reduced(), seed % 4).unwrap();
        let z = (gan.noise(2, seed).unwrap() * scale).unwrap();
        prop_assert!(max_abs(&gan.generate(&z).unwrap()) <= 1.0);
    }
}

#[test]
fn smoke_training_honors_checkpoint_policy() {
    let (_d, g) = group(8);
    assert_eq!(g.len(), 8);
    let out = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let cfg = GanTrainConfig {
        epochs: 5,
        seed: 0,
        policy: CheckpointPolicy::default(),
        out_dir: out.path().to_path_buf(),
    };
    let outcome = train(&g, &DcganSpec::reduced(), &cfg).unwrap();
    assert_eq!(outcome.losses.len(), 5);
    assert!(outcome
        .losses
        .iter()
        .all(|l| l.discriminator.is_finite() && l.generator.is_finite()));
    assert!(outcome.checkpoints.is_empty());
    assert!(!out.path().join("checkpoints").exists());
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn early_policy_persists_and_reloads_checkpoints() {
    let (_d, g) = group(4);
    let out = tempfile::tempdir().unwrap();
    let spec = DcganSpec::reduced();
    let cfg = GanTrainConfig {
        epochs: 5,
        seed: 9,
        policy: CheckpointPolicy {
            monitor_every: 2,
            save_from: 3,
            save_every: 2,
        },
        out_dir: out.path().to_path_buf(),
    };
    let outcome = train(&g, &spec, &cfg).unwrap();
    assert_eq!(outcome.checkpoints.len(), 2);
    assert_eq!(outcome.grids.len(), 2);
    assert!(outcome.grids.iter().all(|p| p.exists()));
    let ckpt = DcganCheckpoint::load(&outcome.checkpoints[1]).unwrap();
    assert_eq!(ckpt.epoch, 5);
    assert_eq!(ckpt.emotion, EmotionLabel::Happy);
    assert_eq!(ckpt.spec, spec);

    let other = DcganSpec {
        leaky_slope: 0.1,
        ..spec.clone()
    };
    let err = sample(
        DcganCheckpoint::load(&outcome.checkpoints[1]).unwrap(),
        &other,
        3,
        0,
        out.path(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Incompatible(_)));

    let empty = sample(
        DcganCheckpoint::load(&outcome.checkpoints[1]).unwrap(),
        &spec,
        0,
        0,
        out.path(),
    )
    .unwrap();
    assert!(empty.is_empty());

    let a_dir = out.path().join("a");
    let b_dir = out.path().join("b");
    let a = sample(
        DcganCheckpoint::load(&outcome.checkpoints[1]).unwrap(),
        &spec,
        6,
        4,
        &a_dir,
    )
    .unwrap();
    let b = sample(ckpt, &spec, 6, 4, &b_dir).unwrap();
    assert_eq!(a.len(), 6);
    for (ra, rb) in a.records().iter().zip(b.records()) {
        assert_eq!(ra.id, rb.id);
        assert_eq!(ra.source, Source::GanQ);
        assert_eq!(ra.label, EmotionLabel::Happy);
        assert_eq!(std::fs::read(&ra.path).unwrap(), std::fs::read(&rb.path).unwrap());
        StandardImage::load(&ra.path).unwrap();
    }
}

#[test]
fn mixed_or_empty_groups_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_fixture(
        &FixtureSpec {
            images_per_class: 1,
            ..FixtureSpec::default()
        },
        dir.path(),
    )
    .unwrap();
    let cfg = GanTrainConfig {
        epochs: 1,
        seed: 0,
        policy: CheckpointPolicy::default(),
        out_dir: dir.path().join("gan"),
    };
    assert!(matches!(train(&m, &DcganSpec::reduced(), &cfg), Err(Error::Config(_))));
    assert!(matches!(
        train(&DatasetManifest::empty("E"), &DcganSpec::reduced(), &cfg),
        Err(Error::Config(_))
    ));
}

fn seven_checkpoints(spec: &DcganSpec, dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    EmotionLabel::ALL
        .iter()
        .map(|&e| {
            let gan = Dcgan::build(spec, e.index() as u64).unwrap();
            let p = dir.join(format!("{e}.safetensors"));
            DcganCheckpoint::capture(&gan, e, 1000).save(&p).unwrap();
            p
        })
        .collect()
}

#[test]
fn seven_emotions_yield_1050_records() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DcganSpec::reduced();
    let mut records = Vec::new();
    for p in seven_checkpoints(&spec, dir.path()) {
        let m = sample(
            DcganCheckpoint::load(&p).unwrap(),
            &spec,
            150,
            1,
            &dir.path().join("ganq"),
        )
        .unwrap();
        assert_eq!(m.len(), 150);
        records.extend(m.into_records());
    }
    let all = DatasetManifest::new("KDEF_GAN_Q", records).unwrap();
    assert_eq!(all.len(), 1050);
    assert!(EmotionLabel::ALL.iter().all(|&e| all.count(e) == 150));
}

#[test]
fn sampled_images_round_trip_within_one_level() {
    // Full-resolution output so no resize intervenes.
    let spec = DcganSpec {
        generator_channels: 32,
        discriminator_filters: 4,
        ..DcganSpec::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let gan = Dcgan::build(&spec, 2).unwrap();
    let p = dir.path().join("c.safetensors");
    DcganCheckpoint::capture(&gan, EmotionLabel::Sad, 1200)
        .save(&p)
        .unwrap();
    let m = sample(DcganCheckpoint::load(&p).unwrap(), &spec, 2, 8, dir.path()).unwrap();
    let z = gan.noise(2, fer_core::seed::derive_seed(8, "sad", 0)).unwrap();
    let expected = to_images(&gan.generate(&z).unwrap()).unwrap();
    for (r, e) in m.records().iter().zip(&expected) {
        let back = normalize(&PixelImage::load(&r.path).unwrap(), NormalizationScheme::SymmetricUnit);
        let worst = back
            .data
            .iter()
            .zip(&e.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0f32, f32::max);
        assert!(worst <= 1.0 / 255.0 + 1e-6, "{worst}");
    }
}
