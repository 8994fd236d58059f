//! The config-driven end-to-end run behind `fer run`.
//!
//! Every stage writes `<output_root>/<stage>/manifest.jsonl` next to a
//! `stamp` holding a digest of its inputs. A stage whose stamp matches is
//! reused, so an interrupted run resumes where it stopped and a finished run
//! repeats nothing. Trained evaluation runs are reused through the run store.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fer_core::augment;
use fer_core::evaluation::{self, manifest_digest};
use fer_core::registry::{self, Components, TrainSet, CKPLUS, JAFFE};
use fer_core::report::RunStore;
use fer_core::seed::hex_digest;
use fer_core::{DatasetManifest, EmotionLabel};
use fer_nets::classifier::FineTuner;
use fer_nets::dcgan::{self, checkpoint_file_name, CheckpointPolicy, GanTrainConfig};
use fer_nets::weights::WeightSource;

use crate::commands::{self, load_dataset, run_preprocess};
use crate::config::{validate_config, ExperimentConfig, TestSet};
use crate::{invalid, Ctx};

const MANIFEST: &str = "manifest.jsonl";

/// Reuses `dir/manifest.jsonl` when `dir/stamp` equals `digest`; otherwise
/// runs `make` and records both.
fn cached(dir: &Path, digest: &str, make: impl FnOnce() -> Result<DatasetManifest>) -> Result<DatasetManifest> {
    let stamp = dir.join("stamp");
    let manifest = dir.join(MANIFEST);
    if std::fs::read_to_string(&stamp).is_ok_and(|s| s.trim() == digest) && manifest.is_file() {
        tracing::info!(stage = "run", dir = %dir.display(), "reusing finished stage");
        return Ok(DatasetManifest::read(&manifest)?);
    }
    let m = make()?;
    m.write(&manifest)?;
    write(&stamp, digest)?;
    Ok(m)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn digest_of(parts: &[&str]) -> String {
    hex_digest(parts.join("\u{1f}").as_bytes())
}

struct Plan {
    train_sets: Vec<TrainSet>,
    tests: Vec<TestSet>,
    need_gan_q: bool,
    need_union: bool,
}

impl Plan {
    fn new(cfg: &ExperimentConfig) -> Self {
        let train_sets = cfg.train_sets();
        let need_union = !cfg.evaluation.kfold_backbones.is_empty();
        Self {
            need_gan_q: need_union
                || !cfg.evaluation.gan_quality_backbones.is_empty()
                || train_sets.iter().any(|s| s.needs_gan_q()),
            tests: cfg.test_sets(),
            train_sets,
            need_union,
        }
    }

    fn describe(&self, cfg: &ExperimentConfig) -> String {
        let e = &cfg.evaluation;
        let mut lines = vec![format!("output root {}", cfg.output_root.display())];
        lines.push(format!(
            "preprocess configured datasets with the {:?} detector",
            cfg.preprocess.detector
        ));
        lines.push(format!(
            "augment KDEF ×{} (seed {})",
            cfg.augment.replicas, cfg.seeds.augment
        ));
        if self.need_gan_q {
            let pinned = cfg.pinned();
            let missing: Vec<_> = EmotionLabel::ALL
                .iter()
                .filter(|l| !pinned.contains_key(l))
                .map(|l| l.as_str())
                .collect();
            lines.push(format!(
                "train 7 DCGANs for {} epochs (seed {}), sample {} per emotion (seed {}){}",
                cfg.gan.epochs,
                cfg.seeds.gan,
                cfg.gan.samples_per_emotion,
                cfg.seeds.sample,
                if missing.is_empty() {
                    String::new()
                } else {
                    format!("; unpinned: {}", missing.join(", "))
                }
            ));
        }
        lines.push(format!(
            "cross-database: {} train set(s) × {} backbone(s) × {} runs, tested on {}",
            self.train_sets.len(),
            e.backbones.len(),
            e.runs_per_cell,
            e.test_sets.join(", ")
        ));
        if self.need_union {
            lines.push(format!(
                "{}-fold validation on UNION for {}",
                e.kfold_k,
                e.kfold_backbones.join(", ")
            ));
        }
        if !e.gan_quality_backbones.is_empty() {
            lines.push(format!("GAN-quality check with {}", e.gan_quality_backbones.join(", ")));
        }
        lines.join("\n  ")
    }
}

pub fn run(ctx: &Ctx, config_path: &Path) -> Result<()> {
    let cfg = validate_config(config_path)?;
    let plan = Plan::new(&cfg);
    if ctx.plan(plan.describe(&cfg)) {
        return Ok(());
    }
    let root = &cfg.output_root;
    write(&root.join("config.resolved.json"), serde_json::to_string_pretty(&cfg)?)?;

    let pre = serde_json::to_string(&cfg.preprocess)?;
    let mut processed: BTreeMap<&str, DatasetManifest> = BTreeMap::new();
    for key in ["kdef", "ckplus", "jaffe", "gan_pfa", "actors"] {
        let Some(path) = cfg.dataset(key) else { continue };
        let raw = load_dataset(key, path)?;
        tracing::info!(stage = "ingest", dataset = key, records = raw.len(), "loaded");
        let dir = root.join("preprocessed").join(key);
        let m = cached(&dir, &digest_of(&[key, &manifest_digest(&raw), &pre]), || {
            Ok(run_preprocess(
                &raw,
                cfg.preprocess.detector,
                cfg.preprocess.confidence,
                &dir.join("images"),
            )?
            .manifest)
        })?;
        processed.insert(key, m);
    }
    let kdef = processed.remove("kdef").expect("validated");

    let aug_dir = root.join("geom_aug");
    let aug_digest = digest_of(&[
        &manifest_digest(&kdef),
        &serde_json::to_string(&cfg.augment)?,
        &cfg.seeds.augment.to_string(),
    ]);
    let geom_aug = cached(&aug_dir, &aug_digest, || {
        Ok(augment::expand(
            &kdef,
            &cfg.augment,
            cfg.seeds.augment,
            &aug_dir.join("images"),
        )?)
    })?;
    tracing::info!(
        stage = "augment",
        input = kdef.len(),
        output = geom_aug.len(),
        "geometric expansion ready"
    );

    let gan_q = if plan.need_gan_q {
        let actors = processed
            .get("actors")
            .ok_or_else(|| invalid("datasets.actors is required for GAN training"))?;
        Some(gan_stage(&cfg, &kdef, actors)?)
    } else {
        None
    };

    let components = Components {
        kdef: &kdef,
        geom_aug: &geom_aug,
        gan_pfa: processed.get("gan_pfa"),
        gan_q: gan_q.as_ref(),
        ckplus: processed.get("ckplus"),
        jaffe: processed.get("jaffe"),
    };
    let train_sets: Vec<_> = plan
        .train_sets
        .iter()
        .map(|&s| components.build(s))
        .collect::<Result<_, _>>()?;
    for s in &train_sets {
        tracing::info!(
            stage = "compose",
            set = s.name(),
            records = s.len(),
            "training set ready"
        );
    }
    let tests: Vec<DatasetManifest> = plan
        .tests
        .iter()
        .map(|t| match t {
            TestSet::CkPlus => processed["ckplus"].clone().renamed(CKPLUS),
            TestSet::Jaffe => processed["jaffe"].clone().renamed(JAFFE),
        })
        .collect();

    let weights = match &cfg.finetune.weights_root {
        Some(p) => WeightSource::Root(p.clone()),
        None => commands::parse_weights(None)?,
    };
    let trainer = FineTuner {
        weights,
        config: cfg.finetune.run_config(),
        artifacts: None,
    };
    let store = RunStore::open(root.join("runs"))?;
    let reports_dir = root.join("reports");
    let mut reports = evaluation::cross_database_suite(
        &trainer,
        &cfg.evaluation.backbones,
        &train_sets,
        &tests,
        cfg.evaluation.runs_per_cell,
        cfg.seeds.seed_base,
        Some(&store),
    )?;

    if plan.need_union {
        let union = components.build(TrainSet::Union)?;
        tracing::info!(
            stage = "compose",
            set = union.name(),
            records = union.len(),
            "union ready"
        );
        for b in &cfg.evaluation.kfold_backbones {
            reports.push(evaluation::kfold_suite(
                &trainer,
                &union,
                b,
                cfg.evaluation.kfold_k,
                cfg.seeds.kfold,
                Some(&store),
            )?);
        }
    }

    if !cfg.evaluation.gan_quality_backbones.is_empty() {
        let ol = components.build(TrainSet::KdefOl)?;
        let scorer = FineTuner {
            artifacts: Some(root.join("gan_quality").join("models")),
            ..trainer.clone()
        };
        let mut models = Vec::new();
        for b in &cfg.evaluation.gan_quality_backbones {
            let stem = FineTuner::artifact_stem(ol.name(), commands::parse_backbone(b)?.as_str(), cfg.seeds.seed_base);
            let saved = root
                .join("gan_quality")
                .join("models")
                .join(format!("{stem}.safetensors"));
            let model = match fer_nets::classifier::ClassifierModel::load(&saved) {
                Ok(m) if m.meta().config_digest == fer_core::evaluation::ModelTrainer::config_digest(&scorer) => m,
                _ => scorer.fit(b, &ol, cfg.seeds.seed_base)?.0,
            };
            models.push(model);
        }
        let groups = commands::groups_by_emotion(std::slice::from_ref(gan_q.as_ref().expect("planned")))?;
        commands::score_gan_groups(&models, &groups, &root.join("gan_quality"))?;
    }

    std::fs::create_dir_all(&reports_dir)?;
    commands::finish_reports(&reports, &reports_dir)
}

/// Trains every emotion's DCGAN as far as needed, then samples the pinned
/// checkpoints. Stops with a validation error naming the grids to inspect
/// when some emotion has no pinned epoch yet.
fn gan_stage(cfg: &ExperimentConfig, kdef: &DatasetManifest, actors: &DatasetManifest) -> Result<DatasetManifest> {
    let root = cfg.output_root.join("gan");
    let spec = &cfg.gan.spec;
    let pinned = cfg.pinned();
    let policy = CheckpointPolicy::default();
    let mut chosen: Vec<PathBuf> = Vec::new();
    let mut unpinned = Vec::new();
    for &label in &EmotionLabel::ALL {
        let dir = root.join(label.as_str());
        let ckpt_dir = dir.join("checkpoints");
        let stamp = digest_of(&[&spec.hash(), &cfg.gan.epochs.to_string(), &cfg.seeds.gan.to_string()]);
        let done = std::fs::read_to_string(dir.join("stamp")).is_ok_and(|s| s.trim() == stamp);
        if !done {
            let group = registry::gan_training_group(kdef, actors, label)?;
            tracing::info!(stage = "gan_train", emotion = %label, images = group.len(), epochs = cfg.gan.epochs, "training");
            let seed = fer_core::seed::derive_seed(cfg.seeds.gan, label.as_str(), 0);
            let out = dcgan::train(
                &group,
                spec,
                &GanTrainConfig {
                    epochs: cfg.gan.epochs,
                    seed,
                    policy,
                    out_dir: dir.clone(),
                },
            )?;
            write(&dir.join("losses.json"), serde_json::to_string_pretty(&out.losses)?)?;
            write(&dir.join("stamp"), &stamp)?;
        }
        match pinned.get(&label) {
            Some(&epoch) => chosen.push(ckpt_dir.join(checkpoint_file_name(label, epoch))),
            None => unpinned.push(format!("{label} (grids in {})", dir.join("grids").display())),
        }
    }
    if !unpinned.is_empty() {
        return Err(invalid(format!(
            "pick a checkpoint epoch for every emotion under gan.pinned_epochs; unpinned: {}",
            unpinned.join(", ")
        )));
    }
    let sample_dir = root.join("samples");
    let names: Vec<String> = chosen.iter().map(|p| p.display().to_string()).collect();
    let digest = digest_of(&[
        &spec.hash(),
        &names.join(","),
        &cfg.gan.samples_per_emotion.to_string(),
        &cfg.seeds.sample.to_string(),
    ]);
    cached(&sample_dir, &digest, || {
        commands::sample_checkpoints(
            &chosen,
            spec,
            cfg.gan.samples_per_emotion,
            cfg.seeds.sample,
            &sample_dir.join("images"),
        )
    })
}
