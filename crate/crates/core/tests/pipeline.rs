use std::path::Path;
use std::time::Instant;

use fer_core::augment::{self, AugmentParams};
use fer_core::fixture::{generate_fixture, FixtureSpec};
use fer_core::preprocess::{preprocess_manifest, ForegroundDetector, DEFAULT_CONFIDENCE};
use fer_core::registry::{self, Components, TrainSet, GAN_Q_PER_EMOTION};
use fer_core::{DatasetManifest, EmotionLabel, ImageRecord, Source};

fn synthetic(name: &str, source: Source, n: usize) -> DatasetManifest {
    let records = (0..n)
        .map(|i| {
            let label = EmotionLabel::from_index(i % 7).unwrap();
            let id = format!("{name}_{i:04}");
            ImageRecord::new(id.clone(), format!("/synthetic/{id}.png"), source, label)
        })
        .collect();
    DatasetManifest::new(name, records).unwrap()
}

#[test]
fn training_set_sizes() {
    let t = Instant::now();
    let kdef = synthetic("KDEF", Source::Kdef, 980);
    let ck = synthetic("CK+", Source::CkPlus, 902);
    let jaffe = synthetic("JAFFE", Source::Jaffe, 213);
    let pfa = synthetic("KDEF_GAN_PFA", Source::GanPfa, 980);
    let aug = augment::plan_expansion(&kdef, &AugmentParams::default(), Path::new("/aug")).unwrap();
    let q = registry::gan_q_plan(GAN_Q_PER_EMOTION, Path::new("/ganq")).unwrap();
    assert_eq!(aug.len(), 4900);
    assert_eq!(q.len(), 1050);
    let c = Components {
        kdef: &kdef,
        geom_aug: &aug,
        gan_pfa: Some(&pfa),
        gan_q: Some(&q),
        ckplus: Some(&ck),
        jaffe: Some(&jaffe),
    };
    let sizes: Vec<usize> = [
        TrainSet::KdefOl,
        TrainSet::KdefPfa,
        TrainSet::KdefQ,
        TrainSet::KdefPfaQ,
        TrainSet::Union,
    ]
    .iter()
    .map(|&s| c.build(s).unwrap().len())
    .collect();
    assert_eq!(sizes, vec![5880, 6860, 6930, 7910, 9025]);
    assert_eq!(5880, 980 + 980 * 5);
    assert!(t.elapsed().as_secs_f64() < 1.0, "{:?}", t.elapsed());
}

#[test]
fn augmented_records_inherit_labels() {
    let kdef = synthetic("KDEF", Source::Kdef, 21);
    let aug = augment::plan_expansion(&kdef, &AugmentParams::default(), Path::new("/aug")).unwrap();
    for r in aug.records() {
        let parent = kdef
            .records()
            .iter()
            .find(|p| Some(&p.id) == r.parent_id.as_ref())
            .unwrap();
        assert_eq!(parent.label, r.label);
        assert_eq!(r.source, Source::GeomAug);
    }
}

fn pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
}

#[test]
fn fixture_preprocess_expand_is_deterministic_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let spec = FixtureSpec {
        images_per_class: 2,
        ..Default::default()
    };
    let raw = generate_fixture(&spec, &dir.path().join("raw")).unwrap();
    assert_eq!(raw.len(), 14);
    let pre = preprocess_manifest(
        &raw,
        ForegroundDetector::default,
        DEFAULT_CONFIDENCE,
        &dir.path().join("pre"),
    )
    .unwrap();
    assert!(pre.excluded.is_empty());
    assert_eq!(pre.manifest.len(), 14);

    let params = AugmentParams::default();
    let one = pool(1).install(|| augment::expand(&pre.manifest, &params, 7, &dir.path().join("aug1")).unwrap());
    let four = pool(4).install(|| augment::expand(&pre.manifest, &params, 7, &dir.path().join("aug4")).unwrap());
    assert_eq!(one.len(), 70);
    for (a, b) in one.records().iter().zip(four.records()) {
        assert_eq!(a.id, b.id);
        assert_eq!(std::fs::read(&a.path).unwrap(), std::fs::read(&b.path).unwrap());
    }
}

#[test]
fn fixture_generation_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = FixtureSpec {
        images_per_class: 1,
        seed: 11,
        ..Default::default()
    };
    let a = generate_fixture(&spec, &dir.path().join("a")).unwrap();
    let b = generate_fixture(&spec, &dir.path().join("b")).unwrap();
    for (x, y) in a.records().iter().zip(b.records()) {
        assert_eq!(std::fs::read(&x.path).unwrap(), std::fs::read(&y.path).unwrap());
    }
    let back = DatasetManifest::read(&dir.path().join("a/manifest.jsonl")).unwrap();
    assert_eq!(back.records(), a.records());
}
