//! Per-emotion DCGAN: generator, discriminator, adversarial training with
//! checkpointing, and sampling into a `KDEF_GAN_Q` manifest.
//!
//! Generator: dense projection of the latent vector to a `grid × grid`
//! map, `stages` transposed convolutions (4×4, stride 2) with leaky
//! rectifiers, then a 3×3 convolution to RGB with `tanh`.
//! Discriminator: a 3×3 stride-1 convolution, `stages` strided 4×4
//! convolutions with doubling filters, then flatten (or global average
//! pooling in the batch-norm variant) and one sigmoid unit.
//!
//! Tensors are NCHW; images leave the module as HWC [`NormalizedImage`]s.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use fer_core::image::{PixelImage, StandardImage, CHANNELS, STANDARD_SIDE};
use fer_core::preprocess::{denormalize_symmetric, normalize, NormalizationScheme, NormalizedImage};
use fer_core::registry::{gan_q_id, KDEF_GAN_Q};
use fer_core::seed::{derive_seed, hex_digest, rng_from_seed};
use fer_core::{DatasetManifest, EmotionLabel, ImageRecord, Source};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BnUpdate, ParamStore, BN_EPSILON, BN_MOMENTUM};
use crate::ops::{self, Padding};
use crate::weights::{read_tensors, write_tensors};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcganSpec {
    pub latent_dim: usize,
    pub image_side: usize,
    /// Side of the generator's first feature map.
    pub grid: usize,
    /// Upsampling stages in the generator and strided stages in the
    /// discriminator.
    pub stages: usize,
    /// Channels of the projected grid; halved by every upsampling stage.
    pub generator_channels: usize,
    /// Filters of the first discriminator convolution; doubled by every
    /// strided stage after the first.
    pub discriminator_filters: usize,
    pub leaky_slope: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub init_std: f64,
    /// Batch normalization after the first two transposed convolutions and
    /// a global-average-pooling discriminator head.
    pub batch_norm_variant: bool,
}

impl Default for DcganSpec {
    fn default() -> Self {
        Self {
            latent_dim: 100,
            image_side: STANDARD_SIDE,
            grid: 7,
            stages: 5,
            generator_channels: 512,
            discriminator_filters: 32,
            leaky_slope: 0.2,
            batch_size: 16,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_epsilon: 1e-7,
            init_std: 0.02,
            batch_norm_variant: false,
        }
    }
}

impl DcganSpec {
    /// 32×32 images from a 4×4 grid in 3 stages, with narrow layers.
    pub fn reduced() -> Self {
        Self {
            image_side: 32,
            grid: 4,
            stages: 3,
            generator_channels: 32,
            discriminator_filters: 8,
            batch_size: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.stages == 0 || self.stages > 10 {
            errs.push(format!("stages must be in 1..=10, got {}", self.stages));
        } else if self.grid << self.stages != self.image_side {
            errs.push(format!(
                "grid {} × 2^{} = {} does not equal image side {}",
                self.grid,
                self.stages,
                self.grid << self.stages,
                self.image_side
            ));
        }
        if self.stages <= 10 && self.generator_channels >> self.stages == 0 {
            errs.push(format!(
                "generator_channels {} cannot be halved {} times",
                self.generator_channels, self.stages
            ));
        }
        for (name, v) in [
            ("latent_dim", self.latent_dim),
            ("grid", self.grid),
            ("discriminator_filters", self.discriminator_filters),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("adam_epsilon", self.adam_epsilon),
            ("init_std", self.init_std),
        ] {
            if !(v.is_finite() && v > 0.0) {
                errs.push(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            errs.push("beta1 and beta2 must lie in [0, 1)".into());
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            errs.push(format!("leaky_slope must lie in [0, 1), got {}", self.leaky_slope));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Spec(errs.join("; ")))
        }
    }

    /// Digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex_digest(serde_json::to_string(self).expect("serializable").as_bytes())
    }

    fn generator_stage_channels(&self) -> Vec<usize> {
        (0..=self.stages).map(|s| self.generator_channels >> s).collect()
    }

    fn discriminator_stage_filters(&self) -> Vec<usize> {
        (0..self.stages).map(|s| self.discriminator_filters << s).collect()
    }

    /// Parameter names and shapes; kernels are `[out, in, k, k]` for
    /// convolutions and `[in, out, k, k]` for transposed convolutions.
    fn generator_shapes(&self) -> Vec<(String, Vec<usize>, ParamInit)> {
        let ch = self.generator_stage_channels();
        let g = self.grid;
        let mut out = vec![
            (
                "g_project/kernel".into(),
                vec![self.latent_dim, ch[0] * g * g],
                ParamInit::Normal,
            ),
            ("g_project/bias".into(), vec![ch[0] * g * g], ParamInit::Zeros),
        ];
        for s in 0..self.stages {
            out.push((
                format!("g_up{s}/kernel"),
                vec![ch[s], ch[s + 1], 4, 4],
                ParamInit::Normal,
            ));
            out.push((format!("g_up{s}/bias"), vec![ch[s + 1]], ParamInit::Zeros));
            if self.batch_norm_variant && s < 2 {
                out.push((format!("g_bn{s}/gamma"), vec![ch[s + 1]], ParamInit::Ones));
                out.push((format!("g_bn{s}/beta"), vec![ch[s + 1]], ParamInit::Zeros));
                out.push((format!("g_bn{s}/moving_mean"), vec![ch[s + 1]], ParamInit::Zeros));
                out.push((format!("g_bn{s}/moving_variance"), vec![ch[s + 1]], ParamInit::Ones));
            }
        }
        out.push((
            "g_out/kernel".into(),
            vec![CHANNELS, ch[self.stages], 3, 3],
            ParamInit::Normal,
        ));
        out.push(("g_out/bias".into(), vec![CHANNELS], ParamInit::Zeros));
        out
    }

    fn discriminator_shapes(&self) -> Vec<(String, Vec<usize>, ParamInit)> {
        let f = self.discriminator_stage_filters();
        let mut out = vec![
            (
                "d_in/kernel".into(),
                vec![self.discriminator_filters, CHANNELS, 3, 3],
                ParamInit::Normal,
            ),
            ("d_in/bias".into(), vec![self.discriminator_filters], ParamInit::Zeros),
        ];
        let mut prev = self.discriminator_filters;
        for (s, &filters) in f.iter().enumerate() {
            out.push((
                format!("d_down{s}/kernel"),
                vec![filters, prev, 4, 4],
                ParamInit::Normal,
            ));
            out.push((format!("d_down{s}/bias"), vec![filters], ParamInit::Zeros));
            prev = filters;
        }
        let features = if self.batch_norm_variant {
            prev
        } else {
            prev * self.grid * self.grid
        };
        out.push(("d_out/kernel".into(), vec![features, 1], ParamInit::Normal));
        out.push(("d_out/bias".into(), vec![1], ParamInit::Zeros));
        out
    }
}

#[derive(Clone, Copy)]
enum ParamInit {
    Normal,
    Zeros,
    Ones,
}

fn init_store(shapes: &[(String, Vec<usize>, ParamInit)], std: f64, seed: u64, device: &Device) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for (key, shape, init) in shapes {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match init {
            ParamInit::Zeros => vec![0.0; n],
            ParamInit::Ones => vec![1.0; n],
            ParamInit::Normal => {
                let dist = Normal::new(0.0, std as f32).expect("positive std");
                let mut rng = rng_from_seed(derive_seed(seed, key, 0));
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
        };
        store.insert(
            key.clone(),
            Var::from_tensor(&Tensor::from_vec(data, shape.as_slice(), device)?)?,
        );
    }
    Ok(store)
}

/// How generator batch normalization gets its statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BnMode {
    Batch,
    Moving,
}

/// A generator/discriminator pair with their optimizers.
pub struct Dcgan {
    spec: DcganSpec,
    generator: ParamStore,
    discriminator: ParamStore,
    g_opt: AdamW,
    d_opt: AdamW,
    device: Device,
}

fn adam(spec: &DcganSpec, store: &ParamStore) -> Result<AdamW> {
    let vars = store
        .iter()
        .filter(|(k, _)| !k.ends_with("/moving_mean") && !k.ends_with("/moving_variance"))
        .map(|(_, v)| v.clone())
        .collect();
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr: spec.learning_rate,
            beta1: spec.beta1,
            beta2: spec.beta2,
            eps: spec.adam_epsilon,
            weight_decay: 0.0,
        },
    )?)
}

impl Dcgan {
    /// Fresh networks with weights drawn from `N(0, init_std)`.
    pub fn build(spec: &DcganSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let device = Device::Cpu;
        let generator = init_store(
            &spec.generator_shapes(),
            spec.init_std,
            derive_seed(seed, "generator", 0),
            &device,
        )?;
        let discriminator = init_store(
            &spec.discriminator_shapes(),
            spec.init_std,
            derive_seed(seed, "discriminator", 0),
            &device,
        )?;
        Self::from_parts(spec.clone(), generator, discriminator)
    }

    fn from_parts(spec: DcganSpec, generator: ParamStore, discriminator: ParamStore) -> Result<Self> {
        let g_opt = adam(&spec, &generator)?;
        let d_opt = adam(&spec, &discriminator)?;
        Ok(Self {
            spec,
            generator,
            discriminator,
            g_opt,
            d_opt,
            device: Device::Cpu,
        })
    }

    pub fn spec(&self) -> &DcganSpec {
        &self.spec
    }

    pub fn generator_params(&self) -> &ParamStore {
        &self.generator
    }

    pub fn discriminator_params(&self) -> &ParamStore {
        &self.discriminator
    }

    /// Standard-normal latent batch `(n, latent_dim)`.
    pub fn noise(&self, n: usize, seed: u64) -> Result<Tensor> {
        let mut rng = rng_from_seed(seed);
        let data: Vec<f32> = (0..n * self.spec.latent_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Ok(Tensor::from_vec(data, (n, self.spec.latent_dim), &self.device)?)
    }

    fn leaky(&self, x: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::leaky_relu(x, self.spec.leaky_slope)?)
    }

    fn gen_forward(&self, z: &Tensor, tracked: bool, bn: BnMode) -> Result<(Tensor, Vec<BnUpdate>)> {
        let p = |k: &str| self.generator.tensor(k, tracked);
        let ch = self.spec.generator_stage_channels();
        let g = self.spec.grid;
        let n = z.dim(0)?;
        let mut x = z
            .matmul(&p("g_project/kernel")?)?
            .broadcast_add(&p("g_project/bias")?)?;
        x = self.leaky(&x.reshape((n, ch[0], g, g))?)?;
        let mut updates = Vec::new();
        for s in 0..self.spec.stages {
            x = x
                .conv_transpose2d(&p(&format!("g_up{s}/kernel"))?, 1, 0, 2, 1)?
                .broadcast_add(&p(&format!("g_up{s}/bias"))?.reshape((1, (), 1, 1))?)?;
            if self.spec.batch_norm_variant && s < 2 {
                let layer = format!("g_bn{s}");
                let gamma = p(&format!("{layer}/gamma"))?;
                let beta = p(&format!("{layer}/beta"))?;
                x = match bn {
                    BnMode::Batch => {
                        let (y, mean, var) = ops::batch_norm_train(&x, Some(&gamma), &beta, BN_EPSILON)?;
                        updates.push(BnUpdate { layer, mean, var });
                        y
                    }
                    BnMode::Moving => ops::batch_norm(
                        &x,
                        Some(&gamma),
                        &beta,
                        &p(&format!("{layer}/moving_mean"))?,
                        &p(&format!("{layer}/moving_variance"))?,
                        BN_EPSILON,
                    )?,
                };
            }
            x = self.leaky(&x)?;
        }
        let y = ops::conv2d(&x, &p("g_out/kernel")?, Some(&p("g_out/bias")?), 1, Padding::Same)?.tanh()?;
        Ok((y, updates))
    }

    fn disc_logits(&self, x: &Tensor, tracked: bool) -> Result<Tensor> {
        let p = |k: &str| self.discriminator.tensor(k, tracked);
        let mut h = self.leaky(&ops::conv2d(
            x,
            &p("d_in/kernel")?,
            Some(&p("d_in/bias")?),
            1,
            Padding::Same,
        )?)?;
        for s in 0..self.spec.stages {
            let k = p(&format!("d_down{s}/kernel"))?;
            let b = p(&format!("d_down{s}/bias"))?;
            h = self.leaky(&ops::conv2d(&h, &k, Some(&b), 2, Padding::Same)?)?;
        }
        let flat = if self.spec.batch_norm_variant {
            ops::global_avg_pool(&h)?
        } else {
            h.flatten_from(1)?
        };
        Ok(flat.matmul(&p("d_out/kernel")?)?.broadcast_add(&p("d_out/bias")?)?)
    }

    /// Inference-mode generator output, `(n, 3, side, side)` in `[-1, 1]`.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.gen_forward(z, false, BnMode::Moving)?.0)
    }

    /// Discriminator probabilities `(n, 1)` that each image is real.
    pub fn discriminate(&self, x: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::sigmoid(&self.disc_logits(x, false)?)?)
    }

    fn check_loss(loss: &Tensor, what: &'static str, epoch: usize, step: usize) -> Result<f32> {
        let value = loss.to_scalar::<f32>()?;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite {
                what,
                epoch,
                step,
                value,
            })
        }
    }

    /// One discriminator update on `real` plus generated images from `z`.
    /// Generator parameters are untouched.
    pub fn discriminator_step(&mut self, real: &Tensor, z: &Tensor) -> Result<f32> {
        self.discriminator_step_at(real, z, 0, 0)
    }

    fn discriminator_step_at(&mut self, real: &Tensor, z: &Tensor, epoch: usize, step: usize) -> Result<f32> {
        let fake = self.gen_forward(z, false, BnMode::Batch)?.0.detach();
        let (nr, nf) = (real.dim(0)?, fake.dim(0)?);
        let x = Tensor::cat(&[real, &fake], 0)?;
        let mut t = vec![1f32; nr];
        t.extend(std::iter::repeat_n(0f32, nf));
        let targets = Tensor::from_vec(t, (nr + nf, 1), &self.device)?;
        let loss = ops::bce_with_logits(&self.disc_logits(&x, true)?, &targets)?;
        let value = Self::check_loss(&loss, "discriminator", epoch, step)?;
        self.d_opt.backward_step(&loss)?;
        Ok(value)
    }

    /// One generator update through the frozen discriminator, labelling the
    /// generated batch as real. Discriminator parameters are untouched.
    pub fn generator_step(&mut self, z: &Tensor) -> Result<f32> {
        self.generator_step_at(z, 0, 0)
    }

    fn generator_step_at(&mut self, z: &Tensor, epoch: usize, step: usize) -> Result<f32> {
        let (fake, updates) = self.gen_forward(z, true, BnMode::Batch)?;
        let logits = self.disc_logits(&fake, false)?;
        let targets = Tensor::ones((z.dim(0)?, 1), candle_core::DType::F32, &self.device)?;
        let loss = ops::bce_with_logits(&logits, &targets)?;
        let value = Self::check_loss(&loss, "generator", epoch, step)?;
        self.g_opt.backward_step(&loss)?;
        self.generator.apply_bn_updates(&updates, BN_MOMENTUM)?;
        Ok(value)
    }
}

/// NCHW generator output to HWC images tagged [`NormalizationScheme::SymmetricUnit`].
pub fn to_images(batch: &Tensor) -> Result<Vec<NormalizedImage>> {
    let (n, c, h, w) = batch.dims4()?;
    if c != CHANNELS {
        return Err(Error::Input(format!("expected {CHANNELS} channels, got {c}")));
    }
    let hwc = batch
        .permute((0, 2, 3, 1))?
        .contiguous()?
        .flatten_all()?
        .to_vec1::<f32>()?;
    Ok(hwc
        .chunks_exact(h * w * c)
        .take(n)
        .map(|d| NormalizedImage {
            width: w,
            height: h,
            scheme: NormalizationScheme::SymmetricUnit,
            data: d.to_vec(),
        })
        .collect())
}

fn images_to_batch(images: &[&NormalizedImage], side: usize, device: &Device) -> Result<Tensor> {
    let data: Vec<f32> = images.iter().flat_map(|i| i.data.iter().copied()).collect();
    Ok(Tensor::from_vec(data, (images.len(), side, side, CHANNELS), device)?
        .permute((0, 3, 1, 2))?
        .contiguous()?)
}

/// When monitoring grids and weight checkpoints are written.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointPolicy {
    pub monitor_every: usize,
    /// First epoch whose weights are persisted.
    pub save_from: usize,
    pub save_every: usize,
}

impl Default for CheckpointPolicy {
    fn default() -> Self {
        Self {
            monitor_every: 100,
            save_from: 1000,
            save_every: 100,
        }
    }
}

impl CheckpointPolicy {
    pub fn monitors(&self, epoch: usize) -> bool {
        self.monitor_every > 0 && epoch.is_multiple_of(self.monitor_every)
    }

    pub fn saves(&self, epoch: usize) -> bool {
        self.save_every > 0 && epoch >= self.save_from && (epoch - self.save_from).is_multiple_of(self.save_every)
    }

    /// Epochs in `1..=epochs` whose weights are persisted.
    pub fn saved_epochs(&self, epochs: usize) -> Vec<usize> {
        (1..=epochs).filter(|&e| self.saves(e)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub policy: CheckpointPolicy,
    /// Receives `grids/` and `checkpoints/`.
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub discriminator: f64,
    pub generator: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanTrainOutcome {
    pub emotion: EmotionLabel,
    pub losses: Vec<EpochLosses>,
    pub checkpoints: Vec<PathBuf>,
    pub grids: Vec<PathBuf>,
}

/// The single label shared by every record of `group`.
fn group_emotion(group: &DatasetManifest) -> Result<EmotionLabel> {
    let labels: Vec<_> = group
        .counts_by_label()
        .iter()
        .filter(|(_, &n)| n > 0)
        .map(|(&l, _)| l)
        .collect();
    match labels.as_slice() {
        [l] => Ok(*l),
        [] => Err(Error::Config(format!("GAN group `{}` is empty", group.name()))),
        _ => Err(Error::Config(format!(
            "GAN group `{}` mixes labels {labels:?}",
            group.name()
        ))),
    }
}

fn load_group(group: &DatasetManifest, side: usize) -> Result<Vec<NormalizedImage>> {
    use rayon::prelude::*;
    group
        .records()
        .par_iter()
        .map(|r| {
            let img = StandardImage::load(&r.path)?.into_pixels();
            let img = if side == STANDARD_SIDE {
                img
            } else {
                img.resize_bilinear(side, side)
            };
            Ok(normalize(&img, NormalizationScheme::SymmetricUnit))
        })
        .collect()
}

pub fn checkpoint_file_name(emotion: EmotionLabel, epoch: usize) -> String {
    format!("{}_epoch_{epoch:04}.safetensors", emotion.as_str())
}

/// Trains on one emotion group.
pub fn train(group: &DatasetManifest, spec: &DcganSpec, cfg: &GanTrainConfig) -> Result<GanTrainOutcome> {
    spec.validate()?;
    let emotion = group_emotion(group)?;
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be positive".into()));
    }
    let images = load_group(group, spec.image_side)?;
    let mut gan = Dcgan::build(spec, cfg.seed)?;
    let grid_noise = gan.noise(16, derive_seed(cfg.seed, "monitor", 0))?;
    tracing::info!(stage = "gan_train", emotion = %emotion, records = images.len(), epochs = cfg.epochs, seed = cfg.seed, "start");
    let mut outcome = GanTrainOutcome {
        emotion,
        losses: Vec::with_capacity(cfg.epochs),
        checkpoints: Vec::new(),
        grids: Vec::new(),
    };
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, "shuffle", epoch as u64)));
        let (mut d_sum, mut g_sum, mut batches) = (0f64, 0f64, 0usize);
        for (i, chunk) in order.chunks(spec.batch_size).enumerate() {
            let real: Vec<&NormalizedImage> = chunk.iter().map(|&j| &images[j]).collect();
            let real = images_to_batch(&real, spec.image_side, &gan.device)?;
            let zd = gan.noise(chunk.len(), derive_seed(cfg.seed, "noise-d", step))?;
            d_sum += gan.discriminator_step_at(&real, &zd, epoch, i)? as f64;
            let zg = gan.noise(chunk.len(), derive_seed(cfg.seed, "noise-g", step))?;
            g_sum += gan.generator_step_at(&zg, epoch, i)? as f64;
            batches += 1;
            step += 1;
        }
        let losses = EpochLosses {
            epoch,
            discriminator: d_sum / batches as f64,
            generator: g_sum / batches as f64,
        };
        tracing::debug!(stage = "gan_train", emotion = %emotion, epoch, d_loss = losses.discriminator, g_loss = losses.generator, "epoch");
        outcome.losses.push(losses);
        if cfg.policy.monitors(epoch) {
            let path = cfg
                .out_dir
                .join("grids")
                .join(format!("{}_epoch_{epoch:04}.png", emotion.as_str()));
            write_grid(&gan.generate(&grid_noise)?, &path)?;
            outcome.grids.push(path);
        }
        if cfg.policy.saves(epoch) {
            let path = cfg
                .out_dir
                .join("checkpoints")
                .join(checkpoint_file_name(emotion, epoch));
            DcganCheckpoint::capture(&gan, emotion, epoch).save(&path)?;
            tracing::info!(stage = "gan_train", emotion = %emotion, epoch, path = %path.display(), "checkpoint");
            outcome.checkpoints.push(path);
        }
    }
    Ok(outcome)
}

/// Tiles a generated batch into a square-ish grid image.
pub fn write_grid(batch: &Tensor, path: &Path) -> Result<()> {
    let images = to_images(batch)?;
    let n = images.len().max(1);
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let side = images.first().map_or(1, |i| i.width);
    let tiles: Vec<PixelImage> = images
        .iter()
        .map(|i| denormalize_symmetric(&i.data, i.width, i.height))
        .collect::<fer_core::Result<_>>()?;
    let grid = PixelImage::from_fn(cols * side, rows * side, |x, y| {
        tiles
            .get((y / side) * cols + x / side)
            .map_or([0.0; 3], |t| t.pixel(x % side, y % side))
    });
    grid.save_png(path)?;
    Ok(())
}

/// Persisted weights of both networks with their provenance.
pub struct DcganCheckpoint {
    pub epoch: usize,
    pub emotion: EmotionLabel,
    pub spec: DcganSpec,
    pub spec_hash: String,
    pub generator: ParamStore,
    pub discriminator: ParamStore,
}

impl DcganCheckpoint {
    pub fn capture(gan: &Dcgan, emotion: EmotionLabel, epoch: usize) -> Self {
        Self {
            epoch,
            emotion,
            spec: gan.spec.clone(),
            spec_hash: gan.spec.hash(),
            generator: gan.generator.clone(),
            discriminator: gan.discriminator.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = std::collections::BTreeMap::new();
        for (prefix, store) in [("generator", &self.generator), ("discriminator", &self.discriminator)] {
            for (k, v) in store.iter() {
                tensors.insert(format!("{prefix}.{k}"), v.as_tensor().clone());
            }
        }
        let meta = HashMap::from([
            ("fer.kind".to_string(), "dcgan".to_string()),
            ("spec_hash".to_string(), self.spec_hash.clone()),
            ("epoch".to_string(), self.epoch.to_string()),
            ("emotion".to_string(), self.emotion.as_str().to_string()),
            (
                "spec".to_string(),
                serde_json::to_string(&self.spec).expect("serializable"),
            ),
        ]);
        write_tensors(path, &tensors, meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, meta) = read_tensors(path, &Device::Cpu)?;
        let field = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Weights(format!("{}: checkpoint header lacks `{k}`", path.display())))
        };
        if field("fer.kind")? != "dcgan" {
            return Err(Error::Weights(format!("{} is not a DCGAN checkpoint", path.display())));
        }
        let spec: DcganSpec = serde_json::from_str(field("spec")?)
            .map_err(|e| Error::Weights(format!("{}: bad spec header: {e}", path.display())))?;
        let spec_hash = field("spec_hash")?.clone();
        if spec.hash() != spec_hash {
            return Err(Error::Incompatible(format!(
                "{}: header spec does not match its hash",
                path.display()
            )));
        }
        let epoch = field("epoch")?
            .parse()
            .map_err(|e| Error::Weights(format!("{}: bad epoch: {e}", path.display())))?;
        let emotion = field("emotion")?.parse().map_err(Error::Weights)?;
        let (mut generator, mut discriminator) = (ParamStore::new(), ParamStore::new());
        for (k, t) in tensors {
            let var = Var::from_tensor(&t)?;
            match k.split_once('.') {
                Some(("generator", rest)) => generator.insert(rest, var),
                Some(("discriminator", rest)) => discriminator.insert(rest, var),
                _ => return Err(Error::Weights(format!("{}: unexpected tensor `{k}`", path.display()))),
            }
        }
        for (store, shapes) in [
            (&generator, spec.generator_shapes()),
            (&discriminator, spec.discriminator_shapes()),
        ] {
            for (key, shape, _) in shapes {
                match store.get(&key) {
                    Some(v) if v.as_tensor().dims() == shape.as_slice() => {}
                    _ => {
                        return Err(Error::Weights(format!(
                            "{}: `{key}` missing or misshapen",
                            path.display()
                        )))
                    }
                }
            }
        }
        Ok(Self {
            epoch,
            emotion,
            spec,
            spec_hash,
            generator,
            discriminator,
        })
    }

    pub fn into_gan(self) -> Result<Dcgan> {
        Dcgan::from_parts(self.spec, self.generator, self.discriminator)
    }
}

/// Generates `count` images of the checkpoint's emotion under
/// `out_dir/<emotion>/` and returns their `KDEF_GAN_Q` manifest.
///
/// Images are denormalized to `[0, 255]` and resized to the standard side if
/// the spec produces smaller ones. `expected` must hash like the spec the
/// checkpoint was trained with.
pub fn sample(
    checkpoint: DcganCheckpoint,
    expected: &DcganSpec,
    count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if checkpoint.spec_hash != expected.hash() {
        return Err(Error::Incompatible(format!(
            "checkpoint spec hash {} differs from configured spec hash {}",
            checkpoint.spec_hash,
            expected.hash()
        )));
    }
    let emotion = checkpoint.emotion;
    let epoch = checkpoint.epoch;
    let gan = checkpoint.into_gan()?;
    let mut records = Vec::with_capacity(count);
    let batch = gan.spec.batch_size.max(1);
    for start in (0..count).step_by(batch) {
        let n = batch.min(count - start);
        let z = gan.noise(n, derive_seed(seed, emotion.as_str(), start as u64))?;
        for (j, img) in to_images(&gan.generate(&z)?)?.into_iter().enumerate() {
            let mut pixels = denormalize_symmetric(&img.data, img.width, img.height)?;
            if img.width != STANDARD_SIDE {
                pixels = pixels.resize_bilinear(STANDARD_SIDE, STANDARD_SIDE);
            }
            let id = gan_q_id(emotion, start + j);
            let path = out_dir.join(emotion.as_str()).join(format!("{id}.png"));
            pixels.save_png(&path)?;
            records.push(ImageRecord::new(id, path, Source::GanQ, emotion));
        }
    }
    tracing::info!(stage = "gan_sample", emotion = %emotion, epoch, records = records.len(), seed, "sampled");
    Ok(DatasetManifest::new(KDEF_GAN_Q, records)?)
}
