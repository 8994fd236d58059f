//! Label-preserving geometric and colour augmentation.
//!
//! Each replica draws one set of factors and applies every kernel in the
//! fixed order rotation → zoom → height → width → flip → contrast. Kernels
//! return an exact copy at their neutral parameter. Pixels uncovered by a
//! transform are filled by edge replication.

use std::f32::consts::PI;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{PixelImage, StandardImage};
use crate::manifest::{file_stem_for, DatasetManifest, ImageRecord, Source};
use crate::registry::KDEF_DA_OL;
use crate::seed::{derive_seed, rng_from_seed};

/// Bounds of the random transforms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Rotation bound as a fraction of a full turn.
    pub rho: f32,
    pub zeta: f32,
    pub theta: f32,
    pub omega: f32,
    pub gamma: f32,
    pub flip_enabled: bool,
    pub replicas: usize,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rho: 0.1,
            zeta: 0.1,
            theta: 0.2,
            omega: 0.2,
            gamma: 0.2,
            flip_enabled: true,
            replicas: 5,
        }
    }
}

impl AugmentParams {
    /// All transforms disabled; useful as a base in tests.
    pub fn identity() -> Self {
        Self {
            rho: 0.0,
            zeta: 0.0,
            theta: 0.0,
            omega: 0.0,
            gamma: 0.0,
            flip_enabled: false,
            replicas: 1,
        }
    }

    /// Returns `(field, message)` for every violated bound.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        for (field, v) in [
            ("rho", self.rho),
            ("zeta", self.zeta),
            ("theta", self.theta),
            ("omega", self.omega),
            ("gamma", self.gamma),
        ] {
            if !(0.0..1.0).contains(&v) {
                out.push((field, format!("{field} = {v} must lie in [0, 1)")));
            }
        }
        if self.replicas == 0 {
            out.push(("replicas", "replicas must be positive".to_string()));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().first() {
            Some((_, msg)) => Err(Error::Config(msg.clone())),
            None => Ok(()),
        }
    }
}

/// One concrete draw of the transform factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawnFactors {
    /// Radians, counter-clockwise positive.
    pub rotation_angle: f32,
    /// Magnification; above 1 zooms in.
    pub zoom: f32,
    pub height_scale: f32,
    pub width_scale: f32,
    pub flip: bool,
    pub contrast: f32,
}

impl DrawnFactors {
    pub const IDENTITY: DrawnFactors = DrawnFactors {
        rotation_angle: 0.0,
        zoom: 1.0,
        height_scale: 1.0,
        width_scale: 1.0,
        flip: false,
        contrast: 1.0,
    };
}

fn uniform(rng: &mut impl Rng, lo: f32, hi: f32) -> f32 {
    let u: f32 = rng.random();
    lo + u * (hi - lo)
}

/// Uniform draws in `[-2πρ, 2πρ]`, `[1-ζ, 1+ζ]`, `[1-θ, 1+θ]`, `[1-ω, 1+ω]`,
/// `[1-γ, 1+γ]`, and a fair coin for the flip when enabled.
pub fn draw_factors(params: &AugmentParams, seed: u64) -> DrawnFactors {
    let mut rng = rng_from_seed(seed);
    let max_angle = 2.0 * PI * params.rho;
    let rotation_angle = uniform(&mut rng, -max_angle, max_angle);
    let zoom = uniform(&mut rng, 1.0 - params.zeta, 1.0 + params.zeta);
    let height_scale = uniform(&mut rng, 1.0 - params.theta, 1.0 + params.theta);
    let width_scale = uniform(&mut rng, 1.0 - params.omega, 1.0 + params.omega);
    let coin: bool = rng.random();
    let flip = params.flip_enabled && coin;
    let contrast = uniform(&mut rng, 1.0 - params.gamma, 1.0 + params.gamma);
    DrawnFactors {
        rotation_angle,
        zoom,
        height_scale,
        width_scale,
        flip,
        contrast,
    }
}

fn center(img: &PixelImage) -> (f32, f32) {
    ((img.width() as f32 - 1.0) / 2.0, (img.height() as f32 - 1.0) / 2.0)
}

pub fn rotate(img: &PixelImage, angle: f32) -> PixelImage {
    if angle == 0.0 {
        return img.clone();
    }
    let (cx, cy) = center(img);
    // destination pixels are mapped back through the inverse rotation
    let (sin, cos) = angle.sin_cos();
    PixelImage::from_fn(img.width(), img.height(), |x, y| {
        let dx = x as f32 - cx;
        let dy = y as f32 - cy;
        let sx = cos * dx - sin * dy + cx;
        let sy = sin * dx + cos * dy + cy;
        img.sample_clamped(sx, sy)
    })
}

pub fn zoom(img: &PixelImage, factor: f32) -> PixelImage {
    if factor == 1.0 {
        return img.clone();
    }
    let (cx, cy) = center(img);
    PixelImage::from_fn(img.width(), img.height(), |x, y| {
        img.sample_clamped(cx + (x as f32 - cx) / factor, cy + (y as f32 - cy) / factor)
    })
}

/// Centre crop or edge-replicated pad back to `width`×`height`.
fn crop_or_pad(img: &PixelImage, width: usize, height: usize) -> PixelImage {
    let off_x = img.width() as isize - width as isize;
    let off_y = img.height() as isize - height as isize;
    let start_x = off_x.div_euclid(2);
    let start_y = off_y.div_euclid(2);
    let max_x = img.width() as isize - 1;
    let max_y = img.height() as isize - 1;
    PixelImage::from_fn(width, height, |x, y| {
        let sx = (x as isize + start_x).clamp(0, max_x) as usize;
        let sy = (y as isize + start_y).clamp(0, max_y) as usize;
        img.pixel(sx, sy)
    })
}

pub fn scale_height(img: &PixelImage, factor: f32) -> PixelImage {
    if factor == 1.0 {
        return img.clone();
    }
    let new_h = ((img.height() as f32 * factor).round() as usize).max(1);
    let resized = img.resize_bilinear(img.width(), new_h);
    crop_or_pad(&resized, img.width(), img.height())
}

pub fn scale_width(img: &PixelImage, factor: f32) -> PixelImage {
    if factor == 1.0 {
        return img.clone();
    }
    let new_w = ((img.width() as f32 * factor).round() as usize).max(1);
    let resized = img.resize_bilinear(new_w, img.height());
    crop_or_pad(&resized, img.width(), img.height())
}

pub fn flip_horizontal(img: &PixelImage) -> PixelImage {
    let w = img.width();
    PixelImage::from_fn(w, img.height(), |x, y| img.pixel(w - 1 - x, y))
}

/// `clip(mean_c + factor * (v - mean_c))` with per-channel means.
pub fn adjust_contrast(img: &PixelImage, factor: f32) -> PixelImage {
    if factor == 1.0 {
        return img.clone();
    }
    let n = (img.width() * img.height()) as f64;
    let mut sums = [0f64; 3];
    for px in img.data().chunks_exact(3) {
        for c in 0..3 {
            sums[c] += px[c] as f64;
        }
    }
    let means = sums.map(|s| (s / n) as f32);
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| [0, 1, 2].map(|c| (means[c] + factor * (px[c] - means[c])).clamp(0.0, 255.0)))
        .collect();
    PixelImage::new(img.width(), img.height(), data).expect("clipped to range")
}

fn apply_to_pixels(img: &PixelImage, f: &DrawnFactors) -> PixelImage {
    let out = rotate(img, f.rotation_angle);
    let out = zoom(&out, f.zoom);
    let out = scale_height(&out, f.height_scale);
    let out = scale_width(&out, f.width_scale);
    let out = if f.flip { flip_horizontal(&out) } else { out };
    adjust_contrast(&out, f.contrast)
}

pub fn apply_kernels(image: &StandardImage, factors: &DrawnFactors) -> StandardImage {
    StandardImage::new(apply_to_pixels(image.as_pixels(), factors)).expect("kernels preserve shape")
}

/// Augmented record id for replica `replica` of `parent_id`.
pub fn replica_id(parent_id: &str, replica: usize) -> String {
    format!("{parent_id}_aug{replica}")
}

/// Seed used for replica `replica` of `parent_id`.
pub fn replica_seed(master_seed: u64, parent_id: &str, replica: usize) -> u64 {
    derive_seed(master_seed, parent_id, replica as u64)
}

/// The records [`expand`] will produce, without touching any image.
pub fn plan_expansion(manifest: &DatasetManifest, params: &AugmentParams, out_dir: &Path) -> Result<DatasetManifest> {
    params.validate()?;
    let records = manifest
        .records()
        .iter()
        .flat_map(|parent| {
            (0..params.replicas).map(move |r| {
                let id = replica_id(&parent.id, r);
                ImageRecord {
                    path: out_dir.join(format!("{}.png", file_stem_for(&id))),
                    id,
                    source: Source::GeomAug,
                    label: parent.label,
                    angle: parent.angle.clone(),
                    subject: parent.subject.clone(),
                    session: parent.session.clone(),
                    parent_id: Some(parent.id.clone()),
                }
            })
        })
        .collect();
    DatasetManifest::new(KDEF_DA_OL, records)
}

/// Offline expansion: `params.replicas` augmented copies of every record,
/// written as PNGs under `out_dir` and returned as a `GEOM_AUG` manifest.
///
/// Work is spread over the current rayon pool; output does not depend on the
/// number of threads.
pub fn expand(
    manifest: &DatasetManifest,
    params: &AugmentParams,
    master_seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let planned = plan_expansion(manifest, params, out_dir)?;
    let replicas = params.replicas;
    manifest
        .records()
        .par_iter()
        .zip(planned.records().par_chunks(replicas))
        .try_for_each(|(parent, children)| {
            let expansion_err = |reason: String| Error::Expansion {
                id: parent.id.clone(),
                reason,
            };
            let image = StandardImage::load(&parent.path).map_err(|e| expansion_err(e.to_string()))?;
            for (r, child) in children.iter().enumerate() {
                let factors = draw_factors(params, replica_seed(master_seed, &parent.id, r));
                apply_kernels(&image, &factors)
                    .save_png(&child.path)
                    .map_err(|e| expansion_err(e.to_string()))?;
            }
            Ok::<_, Error>(())
        })?;
    tracing::info!(
        stage = "augment",
        input = manifest.len(),
        replicas,
        records = planned.len(),
        seed = master_seed,
        "expanded dataset"
    );
    Ok(planned)
}
