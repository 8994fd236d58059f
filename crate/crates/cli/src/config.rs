//! Experiment configuration file (TOML, schema version 1).
//!
//! ```toml
//! schema_version = 1
//! output_root = "runs/full"
//!
//! [datasets]            # manifest files, relative to this file
//! kdef = "manifests/kdef.jsonl"
//! ckplus = "manifests/ckplus.jsonl"
//! jaffe = "manifests/jaffe.jsonl"
//! gan_pfa = "manifests/gan_pfa.jsonl"
//! actors = "manifests/actors.jsonl"
//!
//! [augment]             # transform bounds; omitted keys keep defaults
//! replicas = 5
//!
//! [gan]
//! epochs = 2000
//! pinned_epochs = { happy = 1500, sad = 1200 }
//!
//! [finetune]
//! stage2_epochs = 65
//!
//! [evaluation]
//! backbones = ["inceptionresnetv2"]
//! train_sets = ["KDEF_Q"]
//! test_sets = ["CK+", "JAFFE"]
//! ```
//!
//! Unknown keys are rejected. [`validate_config`] reports every problem at
//! once rather than stopping at the first.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fer_core::augment::AugmentParams;
use fer_core::preprocess::DEFAULT_CONFIDENCE;
use fer_core::registry::{TrainSet, CKPLUS, JAFFE};
use fer_core::EmotionLabel;
use fer_nets::backbones::BackboneKind;
use fer_nets::classifier::TrainRunConfig;
use fer_nets::dcgan::DcganSpec;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Epochs at which checkpoints can be pinned.
pub const PINNABLE_EPOCHS: std::ops::RangeInclusive<usize> = 1000..=2000;
pub const PIN_STEP: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    /// Bounding box of pixels that differ from the border colour.
    Foreground,
    /// The whole frame; for images that are already cropped.
    FullFrame,
}

impl FromStr for DetectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "foreground" => Ok(Self::Foreground),
            "full-frame" => Ok(Self::FullFrame),
            _ => Err(format!("unknown detector `{s}` (foreground, full-frame)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub detector: DetectorKind,
    pub confidence: f32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            detector: DetectorKind::Foreground,
            confidence: DEFAULT_CONFIDENCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub spec: DcganSpec,
    pub epochs: usize,
    pub samples_per_emotion: usize,
    /// Emotion name to the checkpoint epoch picked from the monitoring grids.
    pub pinned_epochs: BTreeMap<String, usize>,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            spec: DcganSpec::default(),
            epochs: 2000,
            samples_per_emotion: fer_core::registry::GAN_Q_PER_EMOTION,
            pinned_epochs: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub stage1_epochs: usize,
    pub stage1_lr: f64,
    pub stage2_epochs: usize,
    pub stage2_lr: f64,
    pub batch_size: usize,
    /// Directory of `<backbone>.safetensors`; falls back to `$FER_WEIGHTS_ROOT`.
    pub weights_root: Option<PathBuf>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        let d = TrainRunConfig::default();
        Self {
            stage1_epochs: d.stage1_epochs,
            stage1_lr: d.stage1_lr,
            stage2_epochs: d.stage2_epochs,
            stage2_lr: d.stage2_lr,
            batch_size: d.batch_size,
            weights_root: None,
        }
    }
}

impl FinetuneConfig {
    pub fn run_config(&self) -> TrainRunConfig {
        TrainRunConfig {
            stage1_epochs: self.stage1_epochs,
            stage1_lr: self.stage1_lr,
            stage2_epochs: self.stage2_epochs,
            stage2_lr: self.stage2_lr,
            batch_size: self.batch_size,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub backbones: Vec<String>,
    pub train_sets: Vec<String>,
    pub test_sets: Vec<String>,
    pub runs_per_cell: usize,
    pub kfold_k: usize,
    /// Backbones for cross validation on the union set; empty skips it.
    pub kfold_backbones: Vec<String>,
    /// Backbones trained on KDEF_OL and scored on the generated groups;
    /// empty skips the check.
    pub gan_quality_backbones: Vec<String>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            backbones: BackboneKind::PRETRAINED
                .iter()
                .map(|b| b.as_str().to_string())
                .collect(),
            train_sets: TrainSet::CROSS_DATABASE
                .iter()
                .map(|s| s.as_str().to_string())
                .collect(),
            test_sets: vec![CKPLUS.into(), JAFFE.into()],
            runs_per_cell: 10,
            kfold_k: 5,
            kfold_backbones: Vec::new(),
            gan_quality_backbones: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub augment: u64,
    pub gan: u64,
    pub sample: u64,
    /// First run seed of every cross-database cell.
    pub seed_base: u64,
    pub kfold: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Datasets {
    pub kdef: Option<PathBuf>,
    pub ckplus: Option<PathBuf>,
    pub jaffe: Option<PathBuf>,
    pub gan_pfa: Option<PathBuf>,
    pub actors: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub output_root: PathBuf,
    #[serde(default)]
    pub datasets: Datasets,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub augment: AugmentParams,
    #[serde(default)]
    pub gan: GanConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub seeds: Seeds,
}

/// One problem in a configuration file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Every problem found in a configuration file.
#[derive(Debug)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// A test set named in the configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestSet {
    CkPlus,
    Jaffe,
}

impl FromStr for TestSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CK+" | "CKPLUS" => Ok(TestSet::CkPlus),
            "JAFFE" => Ok(TestSet::Jaffe),
            _ => Err(format!("unknown test set `{s}` (CK+, JAFFE)")),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text; paths stay as written.
    pub fn parse(text: &str) -> Result<Self, ConfigErrors> {
        toml::from_str(text).map_err(|e| {
            ConfigErrors(vec![ConfigError {
                field: "<file>".into(),
                message: e.to_string().trim().to_string(),
            }])
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_root);
        let d = &mut self.datasets;
        for p in [&mut d.kdef, &mut d.ckplus, &mut d.jaffe, &mut d.gan_pfa, &mut d.actors]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let Some(p) = &mut self.finetune.weights_root {
            fix(p);
        }
    }

    pub fn train_sets(&self) -> Vec<TrainSet> {
        self.evaluation
            .train_sets
            .iter()
            .filter_map(|s| s.parse().ok())
            .collect()
    }

    pub fn test_sets(&self) -> Vec<TestSet> {
        self.evaluation
            .test_sets
            .iter()
            .filter_map(|s| s.parse().ok())
            .collect()
    }

    pub fn pinned(&self) -> BTreeMap<EmotionLabel, usize> {
        self.gan
            .pinned_epochs
            .iter()
            .filter_map(|(k, &v)| Some((k.parse().ok()?, v)))
            .collect()
    }

    /// Which datasets the configured experiments need, by config key.
    fn required_datasets(&self) -> Vec<&'static str> {
        let sets = self.train_sets();
        let union_needed = !self.evaluation.kfold_backbones.is_empty();
        let mut need = vec!["kdef"];
        if sets.iter().any(|s| s.needs_gan_pfa()) || union_needed {
            need.push("gan_pfa");
        }
        if sets.iter().any(|s| s.needs_gan_q()) || union_needed {
            need.push("actors");
        }
        let tests = self.test_sets();
        if tests.contains(&TestSet::CkPlus) || union_needed {
            need.push("ckplus");
        }
        if tests.contains(&TestSet::Jaffe) || union_needed {
            need.push("jaffe");
        }
        need
    }

    pub fn dataset(&self, key: &str) -> Option<&Path> {
        let d = &self.datasets;
        match key {
            "kdef" => d.kdef.as_deref(),
            "ckplus" => d.ckplus.as_deref(),
            "jaffe" => d.jaffe.as_deref(),
            "gan_pfa" => d.gan_pfa.as_deref(),
            "actors" => d.actors.as_deref(),
            _ => None,
        }
    }

    /// Every violated rule; empty when the configuration is usable.
    pub fn violations(&self) -> Vec<ConfigError> {
        let mut errs = Vec::new();
        let mut err = |field: &str, message: String| {
            errs.push(ConfigError {
                field: field.to_string(),
                message,
            })
        };
        if self.schema_version != SCHEMA_VERSION {
            err(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            );
        }
        for key in ["kdef", "ckplus", "jaffe", "gan_pfa", "actors"] {
            if let Some(p) = self.dataset(key) {
                if !p.is_file() {
                    err(&format!("datasets.{key}"), format!("file not found: {}", p.display()));
                }
            }
        }
        for key in self.required_datasets() {
            if self.dataset(key).is_none() {
                err(
                    &format!("datasets.{key}"),
                    "required by the configured experiments but not set".into(),
                );
            }
        }
        if !(self.preprocess.confidence > 0.0 && self.preprocess.confidence < 1.0) {
            err(
                "preprocess.confidence",
                format!("{} must lie in (0, 1)", self.preprocess.confidence),
            );
        }
        for (field, message) in self.augment.violations() {
            err(&format!("augment.{field}"), message);
        }
        if let Err(e) = self.gan.spec.validate() {
            err("gan.spec", e.to_string());
        }
        if self.gan.epochs == 0 {
            err("gan.epochs", "must be positive".into());
        }
        for (emotion, &epoch) in &self.gan.pinned_epochs {
            let field = format!("gan.pinned_epochs.{emotion}");
            if emotion.parse::<EmotionLabel>().is_err() {
                err(&field, format!("unknown emotion `{emotion}`"));
            }
            if !PINNABLE_EPOCHS.contains(&epoch) || epoch % PIN_STEP != 0 {
                err(&field, format!("epoch {epoch} is not one of 1000, 1100, …, 2000"));
            } else if epoch > self.gan.epochs {
                err(
                    &field,
                    format!("epoch {epoch} exceeds gan.epochs = {}", self.gan.epochs),
                );
            }
        }
        for v in self.finetune.run_config().violations() {
            err("finetune", v);
        }
        if let Some(p) = &self.finetune.weights_root {
            if !p.is_dir() {
                err("finetune.weights_root", format!("directory not found: {}", p.display()));
            }
        }
        let e = &self.evaluation;
        for (field, list) in [
            ("evaluation.backbones", &e.backbones),
            ("evaluation.kfold_backbones", &e.kfold_backbones),
            ("evaluation.gan_quality_backbones", &e.gan_quality_backbones),
        ] {
            for b in list {
                if let Err(x) = b.parse::<BackboneKind>() {
                    err(field, x.to_string());
                }
            }
        }
        for s in &e.train_sets {
            match s.parse::<TrainSet>() {
                Ok(TrainSet::Union) => err("evaluation.train_sets", "UNION is only used by cross validation".into()),
                Ok(_) => {}
                Err(x) => err("evaluation.train_sets", x),
            }
        }
        for s in &e.test_sets {
            if let Err(x) = s.parse::<TestSet>() {
                err("evaluation.test_sets", x);
            }
        }
        if e.runs_per_cell == 0 {
            err("evaluation.runs_per_cell", "must be positive".into());
        }
        if !e.kfold_backbones.is_empty() && e.kfold_k < 2 {
            err(
                "evaluation.kfold_k",
                format!("{} folds; at least 2 are needed", e.kfold_k),
            );
        }
        errs
    }
}

/// Reads, resolves and checks a configuration file.
///
/// Relative paths are taken relative to the file's directory.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigErrors(vec![ConfigError {
            field: "<file>".into(),
            message: format!("{}: {e}", path.display()),
        }])
    })?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    match cfg.violations() {
        v if v.is_empty() => Ok(cfg),
        v => Err(ConfigErrors(v)),
    }
}
