//! One function per subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fer_core::augment::{self, AugmentParams};
use fer_core::evaluation::{self, Classifier};
use fer_core::fixture::{generate_fixture, FixtureSpec};
use fer_core::preprocess::{preprocess_manifest, ForegroundDetector, FullFrameDetector, PreprocessOutcome};
use fer_core::registry::{self, Components, LoadOptions, TrainSet};
use fer_core::report::{self, GanQualityReport, RunStore};
use fer_core::{DatasetManifest, EmotionLabel, Source};
use fer_nets::backbones::BackboneKind;
use fer_nets::classifier::{ClassifierModel, FineTuner, TrainRunConfig};
use fer_nets::dcgan::{self, CheckpointPolicy, DcganCheckpoint, DcganSpec, GanTrainConfig};
use fer_nets::weights::WeightSource;

use crate::args::*;
use crate::config::DetectorKind;
use crate::{invalid, require_file, Ctx};

pub fn dispatch(ctx: &Ctx, command: &Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(ctx, a),
        Command::Preprocess(a) => preprocess(ctx, a),
        Command::Augment(a) => augment_cmd(ctx, a),
        Command::Compose(a) => compose(ctx, a),
        Command::Split(a) => split(ctx, a),
        Command::Gan(GanCommand::Group(a)) => gan_group(ctx, a),
        Command::Gan(GanCommand::Train(a)) => gan_train(ctx, a),
        Command::Gan(GanCommand::Sample(a)) => gan_sample(ctx, a),
        Command::Finetune(a) => finetune(ctx, a),
        Command::Eval(EvalCommand::Cross(a)) => eval_cross(ctx, a),
        Command::Eval(EvalCommand::Kfold(a)) => eval_kfold(ctx, a),
        Command::Eval(EvalCommand::GanQuality(a)) => eval_gan_quality(ctx, a),
        Command::Report(a) => report_cmd(ctx, a),
        Command::Fixture(a) => fixture(ctx, a),
        Command::Validate(a) => {
            let cfg = crate::config::validate_config(&a.config)?;
            println!(
                "{} is valid; output root {}",
                a.config.display(),
                cfg.output_root.display()
            );
            Ok(())
        }
        Command::Run(a) => crate::pipeline::run(ctx, &a.config),
    }
}

/// Reads a manifest that an earlier stage wrote.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    require_file(path)?;
    Ok(DatasetManifest::read(path)?)
}

fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    m.write(path).with_context(|| format!("writing {}", path.display()))?;
    tracing::info!(manifest = m.name(), records = m.len(), path = %path.display(), "manifest written");
    Ok(())
}

fn counts(m: &DatasetManifest) -> String {
    m.counts_by_label()
        .iter()
        .map(|(l, n)| format!("{l}={n}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn ingest(ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    require_file(&a.manifest)?;
    let opts = if a.no_verify {
        LoadOptions::unchecked()
    } else {
        LoadOptions::default()
    };
    let m = match a.dataset {
        DatasetKind::Kdef => registry::load_kdef(&a.manifest, &opts)?,
        DatasetKind::Ckplus => registry::load_ckplus(&a.manifest, &opts)?,
        DatasetKind::Jaffe => registry::load_jaffe(&a.manifest, &opts)?,
        DatasetKind::Generic => DatasetManifest::read(&a.manifest)?,
    };
    tracing::info!(stage = "ingest", dataset = m.name(), records = m.len(), "ingested");
    if ctx.plan(format!(
        "ingest {} records of {} ({}) into {}",
        m.len(),
        m.name(),
        counts(&m),
        a.out.display()
    )) {
        return Ok(());
    }
    write_manifest(&m, &a.out)
}

pub fn run_preprocess(
    m: &DatasetManifest,
    detector: DetectorKind,
    confidence: f32,
    out_dir: &Path,
) -> Result<PreprocessOutcome> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(invalid(format!("confidence {confidence} must lie in (0, 1)")));
    }
    let outcome = match detector {
        DetectorKind::Foreground => preprocess_manifest(m, ForegroundDetector::default, confidence, out_dir)?,
        DetectorKind::FullFrame => preprocess_manifest(m, || FullFrameDetector, confidence, out_dir)?,
    };
    for (id, reason) in &outcome.excluded {
        tracing::warn!(stage = "preprocess", id = %id, reason = %reason, "excluded");
    }
    tracing::info!(
        stage = "preprocess",
        kept = outcome.manifest.len(),
        excluded = outcome.excluded.len(),
        "preprocessed"
    );
    Ok(outcome)
}

fn preprocess(ctx: &Ctx, a: &PreprocessArgs) -> Result<()> {
    let m = read_manifest(&a.manifest)?;
    let out = a.out.clone().unwrap_or_else(|| a.out_dir.join("manifest.jsonl"));
    if ctx.plan(format!(
        "standardize {} images with the {:?} detector (confidence {}) into {}",
        m.len(),
        a.detector,
        a.confidence,
        a.out_dir.display()
    )) {
        return Ok(());
    }
    let outcome = run_preprocess(&m, a.detector.into(), a.confidence, &a.out_dir)?;
    write_manifest(&outcome.manifest, &out)
}

fn augment_params(a: &AugmentArgs) -> Result<AugmentParams> {
    let mut p = match &a.params {
        Some(path) => {
            require_file(path)?;
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        }
        None => AugmentParams::default(),
    };
    if let Some(r) = a.replicas {
        p.replicas = r;
    }
    let v = p.violations();
    if !v.is_empty() {
        let msg: Vec<_> = v.into_iter().map(|(f, m)| format!("augment.{f}: {m}")).collect();
        return Err(invalid(msg.join("; ")));
    }
    Ok(p)
}

fn augment_cmd(ctx: &Ctx, a: &AugmentArgs) -> Result<()> {
    let m = read_manifest(&a.manifest)?;
    let params = augment_params(a)?;
    let out = a.out.clone().unwrap_or_else(|| a.out_dir.join("manifest.jsonl"));
    if ctx.dry_run {
        let plan = augment::plan_expansion(&m, &params, &a.out_dir)?;
        ctx.plan(format!(
            "expand {} records ×{} into {} records under {} (seed {})",
            m.len(),
            params.replicas,
            plan.len(),
            a.out_dir.display(),
            a.seed
        ));
        return Ok(());
    }
    let expanded = augment::expand(&m, &params, a.seed, &a.out_dir)?;
    tracing::info!(
        stage = "augment",
        input = m.len(),
        output = expanded.len(),
        seed = a.seed,
        "expanded"
    );
    write_manifest(&expanded, &out)
}

fn compose(ctx: &Ctx, a: &ComposeArgs) -> Result<()> {
    let set: TrainSet = a.set.parse().map_err(invalid)?;
    let opt = |p: &Option<PathBuf>| p.as_deref().map(read_manifest).transpose();
    let kdef = read_manifest(&a.kdef)?;
    let geom = read_manifest(&a.geom_aug)?;
    let (gan_pfa, gan_q, ckplus, jaffe) = (opt(&a.gan_pfa)?, opt(&a.gan_q)?, opt(&a.ckplus)?, opt(&a.jaffe)?);
    let m = Components {
        kdef: &kdef,
        geom_aug: &geom,
        gan_pfa: gan_pfa.as_ref(),
        gan_q: gan_q.as_ref(),
        ckplus: ckplus.as_ref(),
        jaffe: jaffe.as_ref(),
    }
    .build(set)?;
    tracing::info!(stage = "compose", set = %set, records = m.len(), "composed");
    if ctx.plan(format!(
        "compose {set}: {} records ({}) into {}",
        m.len(),
        counts(&m),
        a.out.display()
    )) {
        return Ok(());
    }
    write_manifest(&m, &a.out)
}

/// Holds out `round(fraction · n_label)` records of every label, at least
/// one and never all of them.
pub fn stratified_split(m: &DatasetManifest, fraction: f64, seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    use rand::seq::SliceRandom;

    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid(format!("test fraction {fraction} must lie in (0, 1)")));
    }
    let mut by_label: BTreeMap<EmotionLabel, Vec<usize>> = BTreeMap::new();
    for (i, r) in m.records().iter().enumerate() {
        by_label.entry(r.label).or_default().push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (label, mut idx) in by_label {
        if idx.len() < 2 {
            return Err(invalid(format!(
                "label {label} has {} record(s); at least 2 are needed to split",
                idx.len()
            )));
        }
        let mut rng = fer_core::seed::rng_from_seed(fer_core::seed::derive_seed(seed, label.as_str(), 0));
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((
        m.select(format!("{}_TRAIN", m.name()), &train),
        m.select(format!("{}_TEST", m.name()), &test),
    ))
}

fn split(ctx: &Ctx, a: &SplitArgs) -> Result<()> {
    let m = read_manifest(&a.manifest)?;
    let (train, test) = stratified_split(&m, a.test_fraction, a.seed)?;
    if ctx.plan(format!(
        "split {} records into {} train ({}) and {} test ({})",
        m.len(),
        train.len(),
        a.train_out.display(),
        test.len(),
        a.test_out.display()
    )) {
        return Ok(());
    }
    write_manifest(&train, &a.train_out)?;
    write_manifest(&test, &a.test_out)
}

pub fn parse_emotion(s: &str) -> Result<EmotionLabel> {
    s.parse().map_err(|e: String| invalid(e))
}

fn gan_group(ctx: &Ctx, a: &GanGroupArgs) -> Result<()> {
    let emotion = parse_emotion(&a.emotion)?;
    let group = registry::gan_training_group(&read_manifest(&a.kdef)?, &read_manifest(&a.actors)?, emotion)?;
    if ctx.plan(format!(
        "{} training group of {} images into {}",
        emotion,
        group.len(),
        a.out.display()
    )) {
        return Ok(());
    }
    write_manifest(&group, &a.out)
}

pub fn gan_spec(a: &GanSpecArgs) -> Result<DcganSpec> {
    let spec = match (&a.spec, a.reduced) {
        (Some(path), _) => {
            require_file(path)?;
            serde_json::from_str(&std::fs::read_to_string(path)?)
                .map_err(|e| invalid(format!("{}: {e}", path.display())))?
        }
        (None, true) => DcganSpec::reduced(),
        (None, false) => DcganSpec::default(),
    };
    spec.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(spec)
}

fn gan_train(ctx: &Ctx, a: &GanTrainArgs) -> Result<()> {
    let group = read_manifest(&a.group)?;
    let spec = gan_spec(&a.spec)?;
    let policy = CheckpointPolicy {
        monitor_every: a.monitor_every,
        save_from: a.save_from,
        save_every: a.save_every,
    };
    if a.epochs == 0 {
        return Err(invalid("epochs must be positive"));
    }
    let saved = policy.saved_epochs(a.epochs);
    if ctx.plan(format!(
        "train a {}px DCGAN on {} images for {} epochs (seed {}); {} checkpoints into {}",
        spec.image_side,
        group.len(),
        a.epochs,
        a.seed,
        saved.len(),
        a.out_dir.join("checkpoints").display()
    )) {
        return Ok(());
    }
    let cfg = GanTrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        policy,
        out_dir: a.out_dir.clone(),
    };
    let outcome = dcgan::train(&group, &spec, &cfg)?;
    let path = a.out_dir.join(format!("{}_losses.json", outcome.emotion));
    std::fs::create_dir_all(&a.out_dir)?;
    std::fs::write(&path, serde_json::to_string_pretty(&outcome)?)
        .with_context(|| format!("writing {}", path.display()))?;
    println!(
        "{}: {} epochs, {} checkpoints, {} grids",
        outcome.emotion,
        outcome.losses.len(),
        outcome.checkpoints.len(),
        outcome.grids.len()
    );
    Ok(())
}

/// Samples `count` images from each checkpoint under `out_dir/<emotion>/`.
pub fn sample_checkpoints(
    paths: &[PathBuf],
    spec: &DcganSpec,
    count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let mut parts = Vec::new();
    for p in paths {
        let ckpt = DcganCheckpoint::load(p)?;
        tracing::info!(stage = "gan_sample", emotion = %ckpt.emotion, epoch = ckpt.epoch, count, seed, "sampling");
        parts.push(dcgan::sample(ckpt, spec, count, seed, out_dir)?);
    }
    let refs: Vec<&DatasetManifest> = parts.iter().collect();
    Ok(fer_core::manifest::compose(registry::KDEF_GAN_Q, &refs)?)
}

fn gan_sample(ctx: &Ctx, a: &GanSampleArgs) -> Result<()> {
    let spec = gan_spec(&a.spec)?;
    let mut emotions = Vec::new();
    for p in &a.checkpoints {
        require_file(p)?;
        let c = DcganCheckpoint::load(p)?;
        if c.spec_hash != spec.hash() {
            return Err(invalid(format!("{} was trained with a different spec", p.display())));
        }
        emotions.push(format!("{}@{}", c.emotion, c.epoch));
    }
    let out = a.out.clone().unwrap_or_else(|| a.out_dir.join("manifest.jsonl"));
    if ctx.plan(format!(
        "sample {} images from each of [{}] (seed {}) into {}",
        a.count,
        emotions.join(", "),
        a.seed,
        a.out_dir.display()
    )) {
        return Ok(());
    }
    let m = sample_checkpoints(&a.checkpoints, &spec, a.count, a.seed, &a.out_dir)?;
    write_manifest(&m, &out)
}

/// `random[:seed]`, a file, or a directory of per-backbone files.
pub fn parse_weights(spec: Option<&str>) -> Result<WeightSource> {
    let Some(s) = spec else {
        return Ok(WeightSource::from_env().unwrap_or(WeightSource::Random { seed: 0 }));
    };
    if let Some(rest) = s.strip_prefix("random") {
        let seed = match rest.strip_prefix(':') {
            Some(n) => n.parse().map_err(|_| invalid(format!("bad weight seed in `{s}`")))?,
            None if rest.is_empty() => 0,
            None => return Err(invalid(format!("unrecognized weights `{s}`"))),
        };
        return Ok(WeightSource::Random { seed });
    }
    let p = PathBuf::from(s);
    if p.is_dir() {
        Ok(WeightSource::Root(p))
    } else if p.is_file() {
        Ok(WeightSource::File(p))
    } else {
        Err(invalid(format!("weights not found: {s}")))
    }
}

pub fn train_config(a: &TrainArgs) -> Result<TrainRunConfig> {
    let d = TrainRunConfig::default();
    let cfg = TrainRunConfig {
        stage1_epochs: a.stage1_epochs.unwrap_or(d.stage1_epochs),
        stage1_lr: a.stage1_lr.unwrap_or(d.stage1_lr),
        stage2_epochs: a.stage2_epochs.unwrap_or(d.stage2_epochs),
        stage2_lr: a.stage2_lr.unwrap_or(d.stage2_lr),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        seed: 0,
    };
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(invalid(v.join("; ")));
    }
    Ok(cfg)
}

pub fn parse_backbone(s: &str) -> Result<BackboneKind> {
    s.parse().map_err(|e: fer_nets::Error| invalid(e.to_string()))
}

fn weights_available(weights: &WeightSource, backbone: BackboneKind) -> Result<()> {
    if let Some(p) = weights.path_for(backbone.as_str()) {
        if !p.is_file() {
            return Err(invalid(format!("no {} weights at {}", backbone.as_str(), p.display())));
        }
    }
    Ok(())
}

fn finetune(ctx: &Ctx, a: &FinetuneArgs) -> Result<()> {
    let m = read_manifest(&a.manifest)?;
    let kind = parse_backbone(&a.backbone)?;
    let config = train_config(&a.train)?;
    let weights = parse_weights(a.train.weights.as_deref())?;
    weights_available(&weights, kind)?;
    if ctx.plan(format!(
        "fine-tune {} on {} ({} records), {}+{} epochs, seed {}, weights {}, into {}",
        kind.as_str(),
        m.name(),
        m.len(),
        config.stage1_epochs,
        config.stage2_epochs,
        a.seed,
        weights.describe(),
        a.out_dir.display()
    )) {
        return Ok(());
    }
    let trainer = FineTuner {
        weights,
        config,
        artifacts: Some(a.out_dir.clone()),
    };
    let (_, log) = trainer.fit(kind.as_str(), &m, a.seed)?;
    if let Some(last) = log.epochs.last() {
        println!(
            "final epoch: loss {:.4}, training accuracy {:.2}%",
            last.loss,
            last.accuracy * 100.0
        );
    }
    Ok(())
}

fn eval_cross(ctx: &Ctx, a: &EvalCrossArgs) -> Result<()> {
    let train: Vec<_> = a.train.iter().map(|p| read_manifest(p)).collect::<Result<_>>()?;
    let test: Vec<_> = a.test.iter().map(|p| read_manifest(p)).collect::<Result<_>>()?;
    let kinds: Vec<_> = a.backbones.iter().map(|b| parse_backbone(b)).collect::<Result<_>>()?;
    let config = train_config(&a.train_args)?;
    let weights = parse_weights(a.train_args.weights.as_deref())?;
    for &k in &kinds {
        weights_available(&weights, k)?;
    }
    if a.runs == 0 {
        return Err(invalid("runs must be positive"));
    }
    if ctx.plan(format!(
        "{} training runs: {} train set(s) × {} backbone(s) × {} seeds from {}, each tested on {} set(s); reports into {}",
        train.len() * kinds.len() * a.runs,
        train.len(),
        kinds.len(),
        a.runs,
        a.seed_base,
        test.len(),
        a.out_dir.display()
    )) {
        return Ok(());
    }
    let trainer = FineTuner {
        weights,
        config,
        artifacts: a.keep_models.then(|| a.out_dir.join("models")),
    };
    let names: Vec<String> = kinds.iter().map(|k| k.as_str().to_string()).collect();
    let store = RunStore::open(a.out_dir.join("runs"))?;
    let reports = evaluation::cross_database_suite(&trainer, &names, &train, &test, a.runs, a.seed_base, Some(&store))?;
    finish_reports(&reports, &a.out_dir)
}

pub fn finish_reports(reports: &[evaluation::EvalReport], dir: &Path) -> Result<()> {
    for r in reports {
        report::write_report(r, dir)?;
    }
    print!("{}", report::summary_table(reports));
    if let Some(bad) = reports.iter().find(|r| !r.complete) {
        anyhow::bail!(
            "{} of {} runs of {} failed: {}",
            bad.failures.len(),
            bad.expected_runs,
            bad.name,
            bad.failures.first().map(|f| f.error.as_str()).unwrap_or("missing runs")
        );
    }
    Ok(())
}

fn eval_kfold(ctx: &Ctx, a: &EvalKfoldArgs) -> Result<()> {
    let m = read_manifest(&a.manifest)?;
    let kind = parse_backbone(&a.backbone)?;
    let config = train_config(&a.train_args)?;
    let weights = parse_weights(a.train_args.weights.as_deref())?;
    weights_available(&weights, kind)?;
    let labels: Vec<_> = m.records().iter().map(|r| r.label).collect();
    let folds = evaluation::stratified_kfold(&labels, a.k, a.seed)?;
    if ctx.plan(format!(
        "{}-fold validation of {} on {} ({} records, folds of {}..{}); report into {}",
        a.k,
        kind.as_str(),
        m.name(),
        m.len(),
        folds.iter().map(Vec::len).min().unwrap_or(0),
        folds.iter().map(Vec::len).max().unwrap_or(0),
        a.out_dir.display()
    )) {
        return Ok(());
    }
    let trainer = FineTuner {
        weights,
        config,
        artifacts: None,
    };
    let store = RunStore::open(a.out_dir.join("runs"))?;
    let r = evaluation::kfold_suite(&trainer, &m, kind.as_str(), a.k, a.seed, Some(&store))?;
    finish_reports(&[r], &a.out_dir)
}

/// Splits generated manifests into one group per emotion present.
pub fn groups_by_emotion(manifests: &[DatasetManifest]) -> Result<BTreeMap<EmotionLabel, DatasetManifest>> {
    let mut out: BTreeMap<EmotionLabel, DatasetManifest> = BTreeMap::new();
    for m in manifests {
        for (&label, &n) in m.counts_by_label() {
            if n == 0 {
                continue;
            }
            let part = m.filter(format!("GAN_{}", label.as_str()), |r| r.label == label);
            let merged = match out.remove(&label) {
                Some(prev) => fer_core::manifest::compose(part.name(), &[&prev, &part])?,
                None => part,
            };
            out.insert(label, merged);
        }
    }
    if out.is_empty() {
        return Err(invalid("no generated images to score"));
    }
    Ok(out)
}

/// Scores each generated group and writes `gan_quality.{json,txt}`.
pub fn score_gan_groups(
    models: &[ClassifierModel],
    groups: &BTreeMap<EmotionLabel, DatasetManifest>,
    out_dir: &Path,
) -> Result<GanQualityReport> {
    let refs: Vec<&dyn Classifier> = models.iter().map(|m| m as &dyn Classifier).collect();
    let map = evaluation::gan_quality_check(&refs, groups)?;
    let r = GanQualityReport::from_map(&map);
    r.write(out_dir)?;
    print!("{}", r.emit_text());
    Ok(r)
}

fn eval_gan_quality(ctx: &Ctx, a: &EvalGanQualityArgs) -> Result<()> {
    let manifests: Vec<_> = a.groups.iter().map(|p| read_manifest(p)).collect::<Result<_>>()?;
    if let Some(r) = manifests
        .iter()
        .flat_map(|m| m.records())
        .find(|r| !r.source.is_generated())
    {
        tracing::warn!(stage = "eval_gan_quality", id = %r.id, source = r.source.as_str(), "scoring a non-generated record");
    }
    let groups = groups_by_emotion(&manifests)?;
    for p in &a.models {
        require_file(p)?;
    }
    if ctx.plan(format!(
        "score {} group(s) ({}) with {} classifier(s); report into {}",
        groups.len(),
        groups
            .iter()
            .map(|(l, g)| format!("{l}={}", g.len()))
            .collect::<Vec<_>>()
            .join(" "),
        a.models.len(),
        a.out_dir.display()
    )) {
        return Ok(());
    }
    let models: Vec<_> = a
        .models
        .iter()
        .map(|p| ClassifierModel::load(p))
        .collect::<Result<_, _>>()?;
    score_gan_groups(&models, &groups, &a.out_dir)?;
    Ok(())
}

fn report_cmd(ctx: &Ctx, a: &ReportArgs) -> Result<()> {
    if !a.dir.is_dir() {
        return Err(invalid(format!("report directory not found: {}", a.dir.display())));
    }
    let reports = report::read_reports(&a.dir)?;
    for r in &reports {
        r.verify().with_context(|| format!("report {}", r.name))?;
    }
    print!("{}", report::summary_table(&reports));
    if let Some(plot) = &a.plot {
        if !ctx.plan(format!("draw {} bars into {}", reports.len(), plot.display())) {
            report::accuracy_bars(&reports, plot)?;
        }
    }
    Ok(())
}

fn fixture(ctx: &Ctx, a: &FixtureArgs) -> Result<()> {
    let spec = FixtureSpec {
        images_per_class: a.per_class,
        separability: a.separability,
        seed: a.seed,
        ..FixtureSpec::default()
    };
    spec.validate().map_err(|e| invalid(e.to_string()))?;
    if ctx.plan(format!(
        "{} fixture images ({} per class, seed {}) into {}",
        a.per_class * EmotionLabel::COUNT,
        a.per_class,
        a.seed,
        a.out_dir.display()
    )) {
        return Ok(());
    }
    let m = generate_fixture(&spec, &a.out_dir)?;
    println!(
        "{} records written to {}",
        m.len(),
        a.out_dir.join("manifest.jsonl").display()
    );
    Ok(())
}

/// Manifest of the right source for a configured dataset key.
pub fn load_dataset(key: &str, path: &Path) -> Result<DatasetManifest> {
    let opts = LoadOptions::default();
    Ok(match key {
        "kdef" => registry::load_kdef(path, &opts)?,
        "ckplus" => registry::load_ckplus(path, &opts)?,
        "jaffe" => registry::load_jaffe(path, &opts)?,
        "gan_pfa" => registry::load_external(path, &opts, Source::GanPfa, registry::KDEF_GAN_PFA)?,
        "actors" => registry::load_external(path, &opts, Source::Actor, "ACTORS")?,
        _ => unreachable!("unknown dataset key {key}"),
    })
}
