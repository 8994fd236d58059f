//! Backbone + 7-way head, two-stage fine-tuning and inference.
//!
//! The head is global average pooling, a 256-unit rectified dense layer and
//! a 7-unit softmax layer. Stage 1 trains only the head with the whole
//! backbone frozen; stage 2 additionally unfreezes the last `k` layers of
//! the backbone's canonical layer list.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use fer_core::evaluation::{Classifier, ModelTrainer, Probabilities};
use fer_core::image::{StandardImage, CHANNELS, STANDARD_SIDE};
use fer_core::preprocess::{normalize, NormalizationScheme, NormalizedImage};
use fer_core::seed::{derive_seed, hex_digest, rng_from_seed};
use fer_core::{DatasetManifest, EmotionLabel, ImageRecord};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbones::{BackboneKind, BackboneSpec};
use crate::error::{Error, Result};
use crate::graph::{Graph, Init, ParamSpec, ParamStore, BN_MOMENTUM};
use crate::ops;
use crate::weights::{read_tensors, save_store, WeightSource};

pub const HEAD_UNITS: usize = 256;
const HIDDEN: &str = "head_dense";
const OUTPUT: &str = "head_predictions";
const INFERENCE_BATCH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    HeadOnly,
    PartialUnfrozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub stage1_epochs: usize,
    pub stage1_lr: f64,
    pub stage2_epochs: usize,
    pub stage2_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            stage1_epochs: 10,
            stage1_lr: 1e-3,
            stage2_epochs: 65,
            stage2_lr: 1e-4,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainRunConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, lr) in [("stage1_lr", self.stage1_lr), ("stage2_lr", self.stage2_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                out.push(format!("{name} must be positive, got {lr}"));
            }
        }
        for (name, n) in [
            ("stage1_epochs", self.stage1_epochs),
            ("stage2_epochs", self.stage2_epochs),
            ("batch_size", self.batch_size),
        ] {
            if n == 0 {
                out.push(format!("{name} must be positive"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().as_slice() {
            [] => Ok(()),
            v => Err(Error::Config(v.join("; "))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: Stage,
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnfrozenLayer {
    /// Position in the canonical layer list, counted from 1.
    pub position: usize,
    pub name: String,
    pub class: String,
    pub trainable_params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub backbone: String,
    pub dataset: String,
    pub seed: u64,
    pub config: TrainRunConfig,
    pub unfrozen: Vec<UnfrozenLayer>,
    pub epochs: Vec<EpochLog>,
}

/// Provenance stored alongside saved model parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub backbone: String,
    pub unfreeze_depth: usize,
    pub seed: u64,
    pub dataset: String,
    pub config_digest: String,
}

pub struct ClassifierModel {
    spec: BackboneSpec,
    graph: Graph,
    backbone: ParamStore,
    head: ParamStore,
    stage: Stage,
    meta: ModelMeta,
    device: Device,
}

fn head_specs(features: usize) -> Vec<ParamSpec> {
    let spec = |layer: usize, name: &str, role: &'static str, shape: Vec<usize>, init| ParamSpec {
        layer,
        key: format!("{name}/{role}"),
        role,
        shape,
        trainable: true,
        init,
    };
    vec![
        spec(0, HIDDEN, "kernel", vec![features, HEAD_UNITS], Init::GlorotUniform),
        spec(0, HIDDEN, "bias", vec![HEAD_UNITS], Init::Zeros),
        spec(
            1,
            OUTPUT,
            "kernel",
            vec![HEAD_UNITS, EmotionLabel::COUNT],
            Init::GlorotUniform,
        ),
        spec(1, OUTPUT, "bias", vec![EmotionLabel::COUNT], Init::Zeros),
    ]
}

/// Stacks normalized HWC images into an NCHW tensor.
fn to_batch(images: &[NormalizedImage], device: &Device) -> Result<Tensor> {
    let data: Vec<f32> = images.iter().flat_map(|i| i.data.iter().copied()).collect();
    let t = Tensor::from_vec(data, (images.len(), STANDARD_SIDE, STANDARD_SIDE, CHANNELS), device)?;
    Ok(t.permute((0, 3, 1, 2))?.contiguous()?)
}

fn load_normalized(records: &[&ImageRecord], scheme: NormalizationScheme) -> Result<Vec<NormalizedImage>> {
    records
        .par_iter()
        .map(|r| Ok(normalize(StandardImage::load(&r.path)?.as_pixels(), scheme)))
        .collect()
}

impl ClassifierModel {
    /// Backbone parameters from `weights`, head initialized from `seed`.
    /// Every backbone layer starts frozen.
    pub fn assemble(kind: BackboneKind, weights: &WeightSource, seed: u64) -> Result<Self> {
        let device = Device::Cpu;
        let graph = kind.build();
        let backbone = weights.load(kind.as_str(), &graph.param_specs(), &device)?;
        let head = ParamStore::init(
            &head_specs(graph.output_shape().2),
            derive_seed(seed, "head", 0),
            &device,
        )?;
        let spec = kind.spec();
        Ok(Self {
            meta: ModelMeta {
                backbone: kind.as_str().into(),
                unfreeze_depth: spec.unfreeze_depth,
                seed,
                ..ModelMeta::default()
            },
            spec,
            graph,
            backbone,
            head,
            stage: Stage::HeadOnly,
            device,
        })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn backbone_params(&self) -> &ParamStore {
        &self.backbone
    }

    pub fn head_params(&self) -> &ParamStore {
        &self.head
    }

    /// Backbone parameters plus the head.
    pub fn total_params(&self) -> usize {
        self.graph.total_params()
            + head_specs(self.graph.output_shape().2)
                .iter()
                .map(|s| s.numel())
                .sum::<usize>()
    }

    /// The layers unfrozen in stage 2, in canonical order.
    pub fn unfrozen_layers(&self) -> Vec<UnfrozenLayer> {
        let order = self.graph.order();
        let k = self.spec.unfreeze_depth;
        let counts = self.graph.layer_trainable_params();
        order
            .iter()
            .enumerate()
            .skip(order.len().saturating_sub(k))
            .map(|(pos, &l)| {
                let layer = &self.graph.layers()[l];
                UnfrozenLayer {
                    position: pos + 1,
                    name: layer.name.clone(),
                    class: layer.op.keras_class().into(),
                    trainable_params: counts[l],
                }
            })
            .collect()
    }

    fn head_logits(&self, features: &Tensor, tracked: bool) -> Result<Tensor> {
        let p = |k: &str| self.head.tensor(k, tracked);
        let pooled = ops::global_avg_pool(features)?;
        let hidden = pooled
            .matmul(&p(&format!("{HIDDEN}/kernel"))?)?
            .broadcast_add(&p(&format!("{HIDDEN}/bias"))?)?
            .relu()?;
        Ok(hidden
            .matmul(&p(&format!("{OUTPUT}/kernel"))?)?
            .broadcast_add(&p(&format!("{OUTPUT}/bias"))?)?)
    }

    fn check_inputs(&self, images: &[NormalizedImage]) -> Result<()> {
        for (i, img) in images.iter().enumerate() {
            if img.scheme != self.spec.normalization {
                return Err(Error::Input(format!(
                    "image {i} is normalized as {:?}, {} expects {:?}",
                    img.scheme, self.spec.kind, self.spec.normalization
                )));
            }
            if img.width != STANDARD_SIDE
                || img.height != STANDARD_SIDE
                || img.data.len() != STANDARD_SIDE * STANDARD_SIDE * CHANNELS
            {
                return Err(Error::Input(format!(
                    "image {i} is {}×{} with {} values, expected {STANDARD_SIDE}×{STANDARD_SIDE}×{CHANNELS}",
                    img.width,
                    img.height,
                    img.data.len()
                )));
            }
        }
        Ok(())
    }

    /// Class probabilities for already-normalized images.
    pub fn predict_normalized(&self, images: &[NormalizedImage]) -> Result<Vec<Probabilities>> {
        self.check_inputs(images)?;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFERENCE_BATCH) {
            let x = to_batch(chunk, &self.device)?;
            let features = self.graph.forward(&self.backbone, &x, None)?.features;
            let probs = ops::softmax(&self.head_logits(&features, false)?)?;
            for row in probs.to_vec2::<f32>()? {
                out.push(row.try_into().expect("seven classes"));
            }
        }
        Ok(out)
    }

    /// Normalizes with the backbone's scheme, then predicts.
    pub fn predict(&self, images: &[StandardImage]) -> Result<Vec<Probabilities>> {
        let normalized: Vec<_> = images
            .iter()
            .map(|i| normalize(i.as_pixels(), self.spec.normalization))
            .collect();
        self.predict_normalized(&normalized)
    }

    /// Runs both stages on `train` and returns the per-epoch log.
    pub fn fit_two_stage(&mut self, train: &DatasetManifest, cfg: &TrainRunConfig) -> Result<TrainingLog> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Config(format!("training manifest `{}` is empty", train.name())));
        }
        let unfrozen = self.unfrozen_layers();
        tracing::info!(
            stage = "finetune",
            backbone = %self.spec.kind,
            layers = self.graph.len(),
            k = self.spec.unfreeze_depth,
            first_unfrozen = unfrozen.first().map(|l| l.name.as_str()).unwrap_or(""),
            records = train.len(),
            seed = cfg.seed,
            "unfreeze boundary"
        );
        for l in &unfrozen {
            tracing::debug!(position = l.position, layer = %l.name, class = %l.class, params = l.trainable_params, "unfrozen layer");
        }
        let mut epochs = self.fit_stage(train, cfg, Stage::HeadOnly)?;
        epochs.extend(self.fit_stage(train, cfg, Stage::PartialUnfrozen)?);
        self.meta.seed = cfg.seed;
        self.meta.dataset = train.name().into();
        Ok(TrainingLog {
            backbone: self.spec.kind.as_str().into(),
            dataset: train.name().into(),
            seed: cfg.seed,
            config: cfg.clone(),
            unfrozen,
            epochs,
        })
    }

    /// Runs one stage alone; [`fit_two_stage`](Self::fit_two_stage) runs both in order.
    pub fn fit_stage(&mut self, train: &DatasetManifest, cfg: &TrainRunConfig, stage: Stage) -> Result<Vec<EpochLog>> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Config(format!("training manifest `{}` is empty", train.name())));
        }
        self.stage = stage;
        let (n_epochs, lr, mask) = match stage {
            Stage::HeadOnly => (cfg.stage1_epochs, cfg.stage1_lr, None),
            Stage::PartialUnfrozen => (
                cfg.stage2_epochs,
                cfg.stage2_lr,
                Some(self.graph.last_k_mask(self.spec.unfreeze_depth)),
            ),
        };
        let mut vars: Vec<Var> = self.head.iter().map(|(_, v)| v.clone()).collect();
        if let Some(mask) = &mask {
            for p in self.graph.param_specs() {
                if p.trainable && mask[p.layer] {
                    vars.push(self.backbone.get(&p.key).expect("assembled").clone());
                }
            }
        }
        let mut opt = AdamW::new(
            vars,
            ParamsAdamW {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-7,
                weight_decay: 0.0,
            },
        )?;
        let records = train.records();
        let stage_key = match stage {
            Stage::HeadOnly => "shuffle-stage1",
            Stage::PartialUnfrozen => "shuffle-stage2",
        };
        let mut log = Vec::with_capacity(n_epochs);
        for epoch in 0..n_epochs {
            let mut order: Vec<usize> = (0..records.len()).collect();
            order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, stage_key, epoch as u64)));
            let (mut loss_sum, mut correct) = (0f64, 0usize);
            for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let batch: Vec<&ImageRecord> = chunk.iter().map(|&i| &records[i]).collect();
                let x = to_batch(&load_normalized(&batch, self.spec.normalization)?, &self.device)?;
                let labels: Vec<u32> = batch.iter().map(|r| r.label.index() as u32).collect();
                let y = Tensor::new(labels.as_slice(), &self.device)?;
                let out = self.graph.forward(&self.backbone, &x, mask.as_deref())?;
                let logits = self.head_logits(&out.features, true)?;
                let loss = ops::softmax_cross_entropy(&logits, &y)?;
                let value = loss.to_scalar::<f32>()?;
                if !value.is_finite() {
                    return Err(Error::NonFinite {
                        what: "classification",
                        epoch: epoch + 1,
                        step,
                        value,
                    });
                }
                opt.backward_step(&loss)?;
                self.backbone.apply_bn_updates(&out.bn_updates, BN_MOMENTUM)?;
                loss_sum += value as f64 * batch.len() as f64;
                correct += ops::argmax_rows(&logits.detach())?
                    .iter()
                    .zip(&labels)
                    .filter(|(p, t)| p == t)
                    .count();
            }
            let entry = EpochLog {
                stage,
                epoch: epoch + 1,
                loss: loss_sum / records.len() as f64,
                accuracy: correct as f64 / records.len() as f64,
            };
            tracing::info!(stage = "finetune", phase = ?stage, epoch = entry.epoch, loss = entry.loss, accuracy = entry.accuracy, "epoch");
            log.push(entry);
        }
        Ok(log)
    }

    pub fn set_config_digest(&mut self, digest: impl Into<String>) {
        self.meta.config_digest = digest.into();
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut store = self.backbone.clone();
        for (k, v) in self.head.iter() {
            store.insert(k.clone(), v.clone());
        }
        let meta = HashMap::from([
            ("fer.kind".to_string(), "classifier".to_string()),
            (
                "fer.model".to_string(),
                serde_json::to_string(&self.meta).expect("serializable"),
            ),
            ("backbone".to_string(), self.meta.backbone.clone()),
            ("unfreeze_depth".to_string(), self.meta.unfreeze_depth.to_string()),
            ("seed".to_string(), self.meta.seed.to_string()),
            ("dataset".to_string(), self.meta.dataset.clone()),
            ("config_digest".to_string(), self.meta.config_digest.clone()),
        ]);
        save_store(path, &store, meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let device = Device::Cpu;
        let (tensors, meta) = read_tensors(path, &device)?;
        if meta.get("fer.kind").map(String::as_str) != Some("classifier") {
            return Err(Error::Weights(format!("{} is not a saved classifier", path.display())));
        }
        let model_meta: ModelMeta = meta
            .get("fer.model")
            .and_then(|m| serde_json::from_str(m).ok())
            .ok_or_else(|| Error::Weights(format!("{}: unreadable model metadata", path.display())))?;
        let kind: BackboneKind = model_meta.backbone.parse()?;
        let graph = kind.build();
        let (mut backbone, mut head) = (ParamStore::new(), ParamStore::new());
        let head_specs = head_specs(graph.output_shape().2);
        for (k, t) in tensors {
            let var = Var::from_tensor(&t.to_dtype(DType::F32)?)?;
            if head_specs.iter().any(|s| s.key == k) {
                head.insert(k, var);
            } else {
                backbone.insert(k, var);
            }
        }
        backbone.check_against(&graph.param_specs())?;
        head.check_against(&head_specs)?;
        Ok(Self {
            spec: kind.spec(),
            graph,
            backbone,
            head,
            stage: Stage::PartialUnfrozen,
            meta: model_meta,
            device,
        })
    }
}

impl Classifier for ClassifierModel {
    fn name(&self) -> &str {
        &self.meta.backbone
    }

    fn predict_records(&self, records: &[ImageRecord]) -> fer_core::Result<Vec<Probabilities>> {
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(INFERENCE_BATCH) {
            let refs: Vec<&ImageRecord> = chunk.iter().collect();
            out.extend(self.predict_normalized(&load_normalized(&refs, self.spec.normalization)?)?);
        }
        Ok(out)
    }
}

/// [`ModelTrainer`] running [`ClassifierModel::fit_two_stage`] per seed.
///
/// With `artifacts` set, each trained model and its log are written to
/// `<artifacts>/<dataset>-<backbone>-s<seed>.{safetensors,json}`.
#[derive(Clone, Debug)]
pub struct FineTuner {
    pub weights: WeightSource,
    pub config: TrainRunConfig,
    pub artifacts: Option<PathBuf>,
}

impl FineTuner {
    pub fn artifact_stem(dataset: &str, backbone: &str, seed: u64) -> String {
        format!("{dataset}-{backbone}-s{seed}")
    }

    pub fn fit(&self, backbone: &str, train: &DatasetManifest, seed: u64) -> Result<(ClassifierModel, TrainingLog)> {
        let kind: BackboneKind = backbone.parse()?;
        let mut model = ClassifierModel::assemble(kind, &self.weights, seed)?;
        let cfg = TrainRunConfig {
            seed,
            ..self.config.clone()
        };
        let log = model.fit_two_stage(train, &cfg)?;
        model.set_config_digest(self.digest());
        if let Some(dir) = &self.artifacts {
            let stem = Self::artifact_stem(train.name(), kind.as_str(), seed);
            model.save(&dir.join(format!("{stem}.safetensors")))?;
            let path = dir.join(format!("{stem}.json"));
            std::fs::write(&path, serde_json::to_string_pretty(&log).expect("serializable"))
                .map_err(|e| Error::io(&path, e))?;
        }
        Ok((model, log))
    }

    fn digest(&self) -> String {
        let text = serde_json::to_string(&(&self.config, self.weights.describe())).expect("serializable");
        hex_digest(text.as_bytes())
    }
}

impl ModelTrainer for FineTuner {
    fn train(&self, backbone: &str, train: &DatasetManifest, seed: u64) -> fer_core::Result<Box<dyn Classifier>> {
        Ok(Box::new(self.fit(backbone, train, seed)?.0))
    }

    fn config_digest(&self) -> String {
        self.digest()
    }
}

/// Bit-exact parameter snapshots grouped by layer name.
pub fn snapshot_by_layer(store: &ParamStore) -> Result<BTreeMap<String, Vec<Vec<f32>>>> {
    let mut out: BTreeMap<String, Vec<Vec<f32>>> = BTreeMap::new();
    for (key, values) in store.snapshot()? {
        let layer = key.split('/').next().unwrap_or(&key).to_string();
        out.entry(layer).or_default().push(values);
    }
    Ok(out)
}
