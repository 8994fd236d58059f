use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::DetectorKind;

#[derive(Debug, Parser)]
#[command(name = "fer", version, about = "Facial expression recognition pipeline")]
pub struct Cli {
    /// Validate inputs and print the plan without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,

    /// Worker threads for per-image work; defaults to all cores.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,

    /// More log output (-v debug, -vv trace). `RUST_LOG` overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    /// Log events as JSON lines instead of text.
    #[arg(long, global = true)]
    pub log_json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and check a dataset manifest, writing a normalized copy.
    Ingest(IngestArgs),
    /// Crop faces and standardize to 224×224×3.
    Preprocess(PreprocessArgs),
    /// Offline geometric/colour expansion.
    Augment(AugmentArgs),
    /// Build a named training set from its component manifests.
    Compose(ComposeArgs),
    /// Stratified train/test split of one manifest.
    Split(SplitArgs),
    /// DCGAN training and sampling.
    #[command(subcommand)]
    Gan(GanCommand),
    /// Two-stage fine-tuning of one backbone.
    Finetune(FinetuneArgs),
    /// Evaluation suites.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Summarize stored evaluation reports.
    Report(ReportArgs),
    /// Generate the synthetic fixture dataset.
    Fixture(FixtureArgs),
    /// Check an experiment configuration file.
    Validate(ConfigArg),
    /// Run every stage an experiment configuration describes.
    Run(ConfigArg),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Kdef,
    Ckplus,
    Jaffe,
    /// An already-ingested manifest of any source.
    Generic,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetKind,
    /// Raw manifest, JSON lines.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the check that every image file exists.
    #[arg(long)]
    pub no_verify: bool,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for the standardized images.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Output manifest; defaults to `<out-dir>/manifest.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "foreground")]
    pub detector: DetectorArg,
    #[arg(long, default_value_t = fer_core::preprocess::DEFAULT_CONFIDENCE)]
    pub confidence: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DetectorArg {
    Foreground,
    FullFrame,
}

impl From<DetectorArg> for DetectorKind {
    fn from(d: DetectorArg) -> Self {
        match d {
            DetectorArg::Foreground => DetectorKind::Foreground,
            DetectorArg::FullFrame => DetectorKind::FullFrame,
        }
    }
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Output manifest; defaults to `<out-dir>/manifest.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// TOML file with transform bounds; omitted keys keep defaults.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Overrides the replica count.
    #[arg(long)]
    pub replicas: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// KDEF_OL, KDEF_PFA, KDEF_Q, KDEF_PFA_Q or UNION.
    #[arg(long)]
    pub set: String,
    #[arg(long)]
    pub kdef: PathBuf,
    /// The geometric expansion of KDEF.
    #[arg(long)]
    pub geom_aug: PathBuf,
    #[arg(long)]
    pub gan_pfa: Option<PathBuf>,
    #[arg(long)]
    pub gan_q: Option<PathBuf>,
    #[arg(long)]
    pub ckplus: Option<PathBuf>,
    #[arg(long)]
    pub jaffe: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fraction of every label held out for testing.
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum GanCommand {
    /// Assemble the training group of one emotion.
    Group(GanGroupArgs),
    /// Train on one emotion group.
    Train(GanTrainArgs),
    /// Draw images from checkpoints.
    Sample(GanSampleArgs),
}

#[derive(Debug, Args)]
pub struct GanSpecArgs {
    /// JSON file with architecture and optimizer settings.
    #[arg(long, conflicts_with = "reduced")]
    pub spec: Option<PathBuf>,
    /// The small 32×32 spec used for smoke runs.
    #[arg(long)]
    pub reduced: bool,
}

#[derive(Debug, Args)]
pub struct GanGroupArgs {
    #[arg(long)]
    pub kdef: PathBuf,
    #[arg(long)]
    pub actors: PathBuf,
    #[arg(long)]
    pub emotion: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GanTrainArgs {
    #[arg(long)]
    pub group: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub monitor_every: usize,
    #[arg(long, default_value_t = 1000)]
    pub save_from: usize,
    #[arg(long, default_value_t = 100)]
    pub save_every: usize,
    #[command(flatten)]
    pub spec: GanSpecArgs,
}

#[derive(Debug, Args)]
pub struct GanSampleArgs {
    /// One per emotion; repeat the flag.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, default_value_t = fer_core::registry::GAN_Q_PER_EMOTION)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Output manifest; defaults to `<out-dir>/manifest.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub spec: GanSpecArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `random[:seed]`, a `.safetensors` file, or a directory holding
    /// `<backbone>.safetensors`. Defaults to `$FER_WEIGHTS_ROOT`.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub stage1_epochs: Option<usize>,
    #[arg(long)]
    pub stage1_lr: Option<f64>,
    #[arg(long)]
    pub stage2_epochs: Option<usize>,
    #[arg(long)]
    pub stage2_lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub backbone: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Receives the weights and the training log.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Train on each training set, test on each test set, repeated per seed.
    Cross(EvalCrossArgs),
    /// Stratified k-fold cross validation on one manifest.
    Kfold(EvalKfoldArgs),
    /// Score generated groups with trained classifiers.
    GanQuality(EvalGanQualityArgs),
}

#[derive(Debug, Args)]
pub struct EvalCrossArgs {
    #[arg(long = "train", required = true)]
    pub train: Vec<PathBuf>,
    #[arg(long = "test", required = true)]
    pub test: Vec<PathBuf>,
    #[arg(long = "backbone", required = true)]
    pub backbones: Vec<String>,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Keep trained models under `<out-dir>/models`.
    #[arg(long)]
    pub keep_models: bool,
    #[command(flatten)]
    pub train_args: TrainArgs,
}

#[derive(Debug, Args)]
pub struct EvalKfoldArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub backbone: String,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub train_args: TrainArgs,
}

#[derive(Debug, Args)]
pub struct EvalGanQualityArgs {
    /// Trained classifier weights; repeat the flag.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Generated manifest; every emotion it holds is scored separately.
    #[arg(long = "group", required = true)]
    pub groups: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory of report JSON files.
    #[arg(long)]
    pub dir: PathBuf,
    /// Also draw a bar chart of mean accuracies.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    pub separability: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    pub config: PathBuf,
}
