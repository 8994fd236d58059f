use std::path::Path;
use std::process::{Command, Output};

use fer_core::{DatasetManifest, ImageRecord, Source};

fn fer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fer"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = fer(args);
    assert!(
        out.status.success(),
        "fer {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    if let Ok(rd) = std::fs::read_dir(dir) {
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                out.extend(files_under(&p));
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

/// Rewrites a fixture manifest as another dataset with distinct ids.
fn retag(src: &Path, prefix: &str, source: Source, out: &Path) {
    let m = DatasetManifest::read(src).unwrap();
    let records = m
        .records()
        .iter()
        .map(|r| ImageRecord::new(format!("{prefix}_{}", r.id), r.path.clone(), source, r.label))
        .collect();
    DatasetManifest::new(prefix, records).unwrap().write(out).unwrap();
}

#[test]
fn fixture_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["fixture", "--out-dir", &s(&a), "--per-class", "3", "--seed", "4"]);
    ok(&["fixture", "--out-dir", &s(&b), "--per-class", "3", "--seed", "4"]);
    let m = DatasetManifest::read(&a.join("manifest.jsonl")).unwrap();
    assert_eq!(m.len(), 21);
    assert!(m.counts_by_label().values().all(|&n| n == 3));
    let fa = files_under(&a.join("images"));
    let fb = files_under(&b.join("images"));
    assert_eq!(fa.len(), 21);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let out = fer(&["--dry-run", "fixture", "--out-dir", &s(&raw), "--per-class", "2"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("plan:"));
    assert!(!raw.exists());

    ok(&["fixture", "--out-dir", &s(&raw), "--per-class", "2"]);
    let manifest = s(&raw.join("manifest.jsonl"));
    let before = files_under(dir.path());
    let plan = ok(&[
        "--dry-run",
        "augment",
        "--manifest",
        &manifest,
        "--out-dir",
        &s(&dir.path().join("aug")),
    ]);
    assert!(plan.contains("into 70 records"), "{plan}");
    ok(&[
        "--dry-run",
        "preprocess",
        "--manifest",
        &manifest,
        "--out-dir",
        &s(&dir.path().join("pre")),
    ]);
    ok(&[
        "--dry-run",
        "split",
        "--manifest",
        &manifest,
        "--train-out",
        &s(&dir.path().join("t.jsonl")),
        "--test-out",
        &s(&dir.path().join("v.jsonl")),
    ]);
    ok(&[
        "--dry-run",
        "finetune",
        "--manifest",
        &manifest,
        "--backbone",
        "surrogate",
        "--weights",
        "random",
        "--out-dir",
        &s(&dir.path().join("ft")),
    ]);
    assert_eq!(files_under(dir.path()), before);
}

#[test]
fn exit_codes_separate_validation_from_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let missing = s(&dir.path().join("nope.jsonl"));
    assert_eq!(
        fer(&["preprocess", "--manifest", &missing, "--out-dir", "x"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(fer(&["no-such-command"]).status.code(), Some(2));

    let raw = dir.path().join("raw");
    ok(&["fixture", "--out-dir", &s(&raw), "--per-class", "2"]);
    let manifest = s(&raw.join("manifest.jsonl"));
    let bad = fer(&[
        "finetune",
        "--manifest",
        &manifest,
        "--backbone",
        "resnet50",
        "--out-dir",
        "x",
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("resnet50"));

    // Records whose image files vanished fail while running.
    for f in files_under(&raw.join("images")) {
        std::fs::remove_file(f).unwrap();
    }
    let out = fer(&[
        "preprocess",
        "--manifest",
        &manifest,
        "--out-dir",
        &s(&dir.path().join("pre")),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_lists_every_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        r#"
schema_version = 1
output_root = "out"
[datasets]
kdef = "missing_kdef.jsonl"
ckplus = "missing_ck.jsonl"
jaffe = "missing_jaffe.jsonl"
[augment]
rho = 1.5
[evaluation]
backbones = ["alexnet"]
train_sets = ["KDEF_OL"]
test_sets = ["CK+", "JAFFE"]
"#,
    )
    .unwrap();
    let out = fer(&["validate", &s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("5 configuration error(s)"), "{err}");
    for needle in [
        "datasets.kdef",
        "datasets.ckplus",
        "datasets.jaffe",
        "augment.rho",
        "alexnet",
    ] {
        assert!(err.contains(needle), "{needle} missing from {err}");
    }
}

#[test]
fn run_stops_for_unpinned_checkpoints_after_dry_run_plan() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["fixture", "--out-dir", &s(&raw), "--per-class", "4"]);
    retag(
        &raw.join("manifest.jsonl"),
        "ck",
        Source::CkPlus,
        &dir.path().join("ck.jsonl"),
    );
    retag(
        &raw.join("manifest.jsonl"),
        "actor",
        Source::Actor,
        &dir.path().join("actors.jsonl"),
    );
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        r#"
schema_version = 1
output_root = "out"
[datasets]
kdef = "raw/manifest.jsonl"
ckplus = "ck.jsonl"
actors = "actors.jsonl"
[preprocess]
detector = "full-frame"
[augment]
replicas = 1
[gan]
epochs = 1
samples_per_emotion = 2
[gan.spec]
image_side = 32
grid = 4
stages = 3
generator_channels = 8
discriminator_filters = 4
batch_size = 4
[finetune]
stage1_epochs = 1
stage2_epochs = 1
batch_size = 8
[evaluation]
backbones = ["surrogate"]
train_sets = ["KDEF_Q"]
test_sets = ["CK+"]
runs_per_cell = 1
"#,
    )
    .unwrap();
    let plan = ok(&["--dry-run", "run", &s(&cfg)]);
    assert!(plan.contains("unpinned: angry"), "{plan}");
    assert!(!dir.path().join("out").exists());

    let out = fer(&["run", &s(&cfg)]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(2), "{err}");
    assert!(err.contains("gan.pinned_epochs"), "{err}");
    assert!(dir.path().join("out/geom_aug/manifest.jsonl").is_file());
}

#[test]
fn augment_rerun_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["fixture", "--out-dir", &s(&raw), "--per-class", "1"]);
    let args = |out: &str| {
        vec![
            "augment".to_string(),
            "--manifest".into(),
            s(&raw.join("manifest.jsonl")),
            "--out-dir".into(),
            s(&dir.path().join(out)),
            "--seed".into(),
            "9".into(),
            "--replicas".into(),
            "2".into(),
        ]
    };
    let a = args("aug");
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let first: Vec<Vec<u8>> = files_under(&dir.path().join("aug"))
        .iter()
        .map(|p| std::fs::read(p).unwrap())
        .collect();
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let second: Vec<Vec<u8>> = files_under(&dir.path().join("aug"))
        .iter()
        .map(|p| std::fs::read(p).unwrap())
        .collect();
    assert_eq!(first.len(), 15);
    assert_eq!(first, second);
}

#[test]
fn run_completes_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["fixture", "--out-dir", &s(&raw), "--per-class", "3"]);
    retag(
        &raw.join("manifest.jsonl"),
        "jf",
        Source::Jaffe,
        &dir.path().join("jaffe.jsonl"),
    );
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        r#"
schema_version = 1
output_root = "out"
[datasets]
kdef = "raw/manifest.jsonl"
jaffe = "jaffe.jsonl"
[augment]
replicas = 1
[finetune]
stage1_epochs = 1
stage2_epochs = 1
batch_size = 8
[evaluation]
backbones = ["surrogate"]
train_sets = ["KDEF_OL"]
test_sets = ["JAFFE"]
runs_per_cell = 2
"#,
    )
    .unwrap();
    let first = ok(&["run", &s(&cfg)]);
    let reports = fer_core::report::read_reports(&dir.path().join("out/reports")).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].train_set, "KDEF_OL");
    assert_eq!(reports[0].runs.len(), 2);
    assert!(reports[0].complete);
    let ol_size = 21 + 21;
    assert!(first.contains("KDEF_OL"), "{first}");
    let aug = DatasetManifest::read(&dir.path().join("out/geom_aug/manifest.jsonl")).unwrap();
    assert_eq!(aug.len() + 21, ol_size);

    let stamp = std::fs::metadata(dir.path().join("out/geom_aug/manifest.jsonl"))
        .unwrap()
        .modified()
        .unwrap();
    let second = ok(&["run", &s(&cfg)]);
    assert_eq!(first, second);
    let again = std::fs::metadata(dir.path().join("out/geom_aug/manifest.jsonl"))
        .unwrap()
        .modified()
        .unwrap();
    assert_eq!(stamp, again);
    assert_eq!(
        fer_core::report::read_reports(&dir.path().join("out/reports")).unwrap(),
        reports
    );
}
