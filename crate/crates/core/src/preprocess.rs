//! Face cropping, standardization and pixel normalization.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{PixelImage, StandardImage, CHANNELS, STANDARD_SIDE};
use crate::manifest::{file_stem_for, DatasetManifest, ImageRecord};

pub const DEFAULT_CONFIDENCE: f32 = 0.5;

/// ImageNet channel means in BGR order.
pub const IMAGENET_BGR_MEAN: [f32; 3] = [103.939, 116.779, 123.68];

/// Tolerance for values marginally outside `[-1, 1]` in
/// [`denormalize_symmetric`]; they are clipped.
pub const SYMMETRIC_TOLERANCE: f32 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NormalizationScheme {
    /// `v / 255`, RGB order.
    UnitInterval,
    /// Channels reversed to BGR, mean subtracted, no scaling.
    BgrMeanCentered,
    /// `v / 127.5 - 1`, RGB order.
    SymmetricUnit,
}

/// A normalized tensor, row-major and channel-interleaved, tagged with the
/// scheme that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedImage {
    pub width: usize,
    pub height: usize,
    pub scheme: NormalizationScheme,
    pub data: Vec<f32>,
}

pub fn normalize(image: &PixelImage, scheme: NormalizationScheme) -> NormalizedImage {
    let src = image.data();
    let data = match scheme {
        NormalizationScheme::UnitInterval => src.iter().map(|&v| v / 255.0).collect(),
        NormalizationScheme::SymmetricUnit => src.iter().map(|&v| v / 127.5 - 1.0).collect(),
        NormalizationScheme::BgrMeanCentered => src
            .chunks_exact(CHANNELS)
            .flat_map(|rgb| {
                [
                    rgb[2] - IMAGENET_BGR_MEAN[0],
                    rgb[1] - IMAGENET_BGR_MEAN[1],
                    rgb[0] - IMAGENET_BGR_MEAN[2],
                ]
            })
            .collect(),
    };
    NormalizedImage {
        width: image.width(),
        height: image.height(),
        scheme,
        data,
    }
}

/// Inverse of the symmetric map, `(v + 1) * 127.5`.
pub fn denormalize_symmetric(values: &[f32], width: usize, height: usize) -> Result<PixelImage> {
    let mut data = Vec::with_capacity(values.len());
    for (index, &v) in values.iter().enumerate() {
        if !v.is_finite() || v.abs() > 1.0 + SYMMETRIC_TOLERANCE {
            return Err(Error::Range { index, value: v });
        }
        data.push(((v.clamp(-1.0, 1.0) + 1.0) * 127.5).clamp(0.0, 255.0));
    }
    PixelImage::new(width, height, data)
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.width * self.height
    }

    /// Intersection with the image bounds, `None` when empty.
    pub fn clipped(&self, width: usize, height: usize) -> Option<Rect> {
        let x1 = (self.x + self.width).min(width);
        let y1 = (self.y + self.height).min(height);
        if self.x >= x1 || self.y >= y1 {
            return None;
        }
        Some(Rect {
            x: self.x,
            y: self.y,
            width: x1 - self.x,
            height: y1 - self.y,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub rect: Rect,
    pub confidence: f32,
}

/// Anything that proposes face rectangles with confidences.
pub trait FaceDetector {
    fn detect(&mut self, image: &PixelImage) -> Vec<Detection>;
}

/// Reports the whole frame as a face with confidence 1.
#[derive(Clone, Copy, Debug, Default)]
pub struct FullFrameDetector;

impl FaceDetector for FullFrameDetector {
    fn detect(&mut self, image: &PixelImage) -> Vec<Detection> {
        vec![Detection {
            rect: Rect {
                x: 0,
                y: 0,
                width: image.width(),
                height: image.height(),
            },
            confidence: 1.0,
        }]
    }
}

/// Returns a fixed list of detections regardless of the input.
#[derive(Clone, Debug, Default)]
pub struct ScriptedDetector {
    pub detections: Vec<Detection>,
}

impl FaceDetector for ScriptedDetector {
    fn detect(&mut self, _image: &PixelImage) -> Vec<Detection> {
        self.detections.clone()
    }
}

/// Deterministic detector for images with a face on a flat background.
///
/// The background colour is the per-channel median of the border pixels.
/// Pixels whose largest channel difference from it exceeds `tolerance` are
/// foreground; the detection is their bounding box and the confidence is the
/// fraction of the box that is foreground.
#[derive(Clone, Copy, Debug)]
pub struct ForegroundDetector {
    pub tolerance: f32,
    pub min_pixels: usize,
}

impl Default for ForegroundDetector {
    fn default() -> Self {
        Self {
            tolerance: 24.0,
            min_pixels: 16,
        }
    }
}

impl FaceDetector for ForegroundDetector {
    fn detect(&mut self, image: &PixelImage) -> Vec<Detection> {
        let (w, h) = (image.width(), image.height());
        let background = border_median(image);
        let mut min_x = usize::MAX;
        let mut min_y = usize::MAX;
        let mut max_x = 0;
        let mut max_y = 0;
        let mut mask = vec![false; w * h];
        let mut count = 0usize;
        for y in 0..h {
            for x in 0..w {
                let p = image.pixel(x, y);
                let diff = (0..3).map(|c| (p[c] - background[c]).abs()).fold(0.0f32, f32::max);
                if diff > self.tolerance {
                    mask[y * w + x] = true;
                    count += 1;
                    min_x = min_x.min(x);
                    min_y = min_y.min(y);
                    max_x = max_x.max(x);
                    max_y = max_y.max(y);
                }
            }
        }
        if count < self.min_pixels {
            return Vec::new();
        }
        let rect = Rect {
            x: min_x,
            y: min_y,
            width: max_x - min_x + 1,
            height: max_y - min_y + 1,
        };
        let inside = (rect.y..rect.y + rect.height)
            .map(|y| {
                mask[y * w + rect.x..y * w + rect.x + rect.width]
                    .iter()
                    .filter(|&&m| m)
                    .count()
            })
            .sum::<usize>();
        vec![Detection {
            rect,
            confidence: inside as f32 / rect.area() as f32,
        }]
    }
}

fn border_median(image: &PixelImage) -> [f32; 3] {
    let (w, h) = (image.width(), image.height());
    let mut channels: [Vec<f32>; 3] = Default::default();
    let mut push = |x: usize, y: usize| {
        let p = image.pixel(x, y);
        for c in 0..3 {
            channels[c].push(p[c]);
        }
    };
    for x in 0..w {
        push(x, 0);
        if h > 1 {
            push(x, h - 1);
        }
    }
    for y in 1..h.saturating_sub(1) {
        push(0, y);
        if w > 1 {
            push(w - 1, y);
        }
    }
    channels.map(|mut v| {
        v.sort_by(f32::total_cmp);
        v[v.len() / 2]
    })
}

/// Picks the highest-confidence detection at or above `threshold`; ties go
/// to the larger rectangle.
pub fn best_detection(detections: &[Detection], threshold: f32) -> Option<Detection> {
    detections
        .iter()
        .filter(|d| d.confidence >= threshold && d.rect.area() > 0)
        .copied()
        .max_by(|a, b| {
            a.confidence
                .total_cmp(&b.confidence)
                .then_with(|| a.rect.area().cmp(&b.rect.area()))
        })
}

/// Crops the best face and resizes it to 224×224 with bilinear sampling.
pub fn detect_and_crop(
    id: &str,
    image: &PixelImage,
    detector: &mut dyn FaceDetector,
    confidence_threshold: f32,
) -> Result<StandardImage> {
    if !(confidence_threshold > 0.0 && confidence_threshold < 1.0) {
        return Err(Error::Config(format!(
            "confidence threshold {confidence_threshold} must lie in (0, 1)"
        )));
    }
    let not_found = || Error::FaceNotFound {
        id: id.to_string(),
        threshold: confidence_threshold,
    };
    let detections = detector.detect(image);
    let best = best_detection(&detections, confidence_threshold).ok_or_else(not_found)?;
    let rect = best.rect.clipped(image.width(), image.height()).ok_or_else(not_found)?;
    let face = image.crop(rect.x, rect.y, rect.width, rect.height)?;
    StandardImage::new(face.resize_bilinear(STANDARD_SIDE, STANDARD_SIDE))
}

/// Outcome of preprocessing a whole manifest.
#[derive(Debug)]
pub struct PreprocessOutcome {
    /// Records that now point at their standardized PNG.
    pub manifest: DatasetManifest,
    /// Records without a usable face, with the reason.
    pub excluded: Vec<(String, String)>,
}

/// Path of the standardized image for a record id.
pub fn processed_path(out_dir: &Path, id: &str) -> PathBuf {
    out_dir.join(format!("{}.png", file_stem_for(id)))
}

/// Standardizes every record, writing `<out_dir>/<id>.png`.
///
/// `make_detector` is called once per worker thread. Records where no face
/// is found are logged and excluded; any other failure aborts.
pub fn preprocess_manifest<D, F>(
    manifest: &DatasetManifest,
    make_detector: F,
    confidence_threshold: f32,
    out_dir: &Path,
) -> Result<PreprocessOutcome>
where
    D: FaceDetector,
    F: Fn() -> D + Sync + Send,
{
    enum Step {
        Kept(ImageRecord),
        Excluded(String, String),
    }
    let steps: Vec<Result<Step>> = manifest
        .records()
        .par_iter()
        .map_init(&make_detector, |detector, record| {
            let raw = PixelImage::load(&record.path).map_err(|e| Error::Ingestion {
                id: record.id.clone(),
                reason: e.to_string(),
            })?;
            match detect_and_crop(&record.id, &raw, detector, confidence_threshold) {
                Ok(std_img) => {
                    let path = processed_path(out_dir, &record.id);
                    std_img.save_png(&path)?;
                    Ok(Step::Kept(ImageRecord { path, ..record.clone() }))
                }
                Err(e @ Error::FaceNotFound { .. }) => Ok(Step::Excluded(record.id.clone(), e.to_string())),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut kept = Vec::with_capacity(steps.len());
    let mut excluded = Vec::new();
    for step in steps {
        match step? {
            Step::Kept(r) => kept.push(r),
            Step::Excluded(id, reason) => {
                tracing::warn!(stage = "preprocess", record = %id, %reason, "record excluded");
                excluded.push((id, reason));
            }
        }
    }
    let manifest = DatasetManifest::new(manifest.name(), kept)?;
    tracing::info!(
        stage = "preprocess",
        dataset = manifest.name(),
        records = manifest.len(),
        excluded = excluded.len(),
        "standardized images"
    );
    Ok(PreprocessOutcome { manifest, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_interval_of_white_is_one() {
        let n = normalize(&StandardImage::filled([255.0; 3]), NormalizationScheme::UnitInterval);
        assert!(n.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bgr_mean_centered_red_pixel() {
        let img = PixelImage::filled(1, 1, [255.0, 0.0, 0.0]);
        let n = normalize(&img, NormalizationScheme::BgrMeanCentered);
        assert_eq!(n.data, vec![-103.939, -116.779, 255.0 - 123.68]);
        assert!((n.data[2] - 131.32).abs() < 1e-4);
    }

    #[test]
    fn bgr_mean_image_maps_to_zero() {
        let [b, g, r] = IMAGENET_BGR_MEAN;
        let img = PixelImage::filled(2, 2, [r, g, b]);
        let n = normalize(&img, NormalizationScheme::BgrMeanCentered);
        assert!(n.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetric_midpoint_is_zero() {
        let img = PixelImage::filled(1, 1, [127.5, 0.0, 255.0]);
        let n = normalize(&img, NormalizationScheme::SymmetricUnit);
        assert_eq!(n.data, vec![0.0, -1.0, 1.0]);
    }

    #[test]
    fn denormalize_extremes_and_tolerance() {
        let lo = denormalize_symmetric(&[-1.0; 3], 1, 1).unwrap();
        assert_eq!(lo.data(), &[0.0; 3]);
        let hi = denormalize_symmetric(&[1.0; 3], 1, 1).unwrap();
        assert_eq!(hi.data(), &[255.0; 3]);
        let clipped = denormalize_symmetric(&[1.0005, -1.0005, 0.0], 1, 1).unwrap();
        assert_eq!(clipped.data(), &[255.0, 0.0, 127.5]);
        assert!(matches!(
            denormalize_symmetric(&[0.0, 1.01, 0.0], 1, 1),
            Err(Error::Range { index: 1, .. })
        ));
    }

    #[test]
    fn best_detection_prefers_confidence_then_area() {
        let r = |w| Rect {
            x: 0,
            y: 0,
            width: w,
            height: w,
        };
        let dets = [
            Detection {
                rect: r(10),
                confidence: 0.9,
            },
            Detection {
                rect: r(20),
                confidence: 0.9,
            },
            Detection {
                rect: r(50),
                confidence: 0.4,
            },
        ];
        assert_eq!(best_detection(&dets, 0.5).unwrap().rect, r(20));
        assert_eq!(best_detection(&dets, 0.95), None);
    }

    #[test]
    fn full_frame_crop_of_standard_image_is_identity() {
        let img = PixelImage::from_fn(224, 224, |x, y| {
            [(x % 256) as f32, (y % 256) as f32, ((x + y) % 256) as f32]
        });
        let out = detect_and_crop("id", &img, &mut FullFrameDetector, 0.5).unwrap();
        assert_eq!(out.as_pixels(), &img);
    }

    #[test]
    fn blank_image_has_no_face() {
        let img = PixelImage::filled(300, 200, [90.0; 3]);
        match detect_and_crop("blank", &img, &mut ForegroundDetector::default(), 0.5) {
            Err(Error::FaceNotFound { id, .. }) => assert_eq!(id, "blank"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn foreground_detector_finds_marker_bounds() {
        let (x0, y0, w, h) = (40, 30, 100, 120);
        let img = PixelImage::from_fn(256, 220, |x, y| {
            if (x0..x0 + w).contains(&x) && (y0..y0 + h).contains(&y) {
                [200.0, 150.0, 120.0]
            } else {
                [60.0; 3]
            }
        });
        let dets = ForegroundDetector::default().detect(&img);
        assert_eq!(dets.len(), 1);
        assert_eq!(
            dets[0].rect,
            Rect {
                x: x0,
                y: y0,
                width: w,
                height: h
            }
        );
        assert_eq!(dets[0].confidence, 1.0);
        let crop = detect_and_crop("m", &img, &mut ForegroundDetector::default(), 0.5).unwrap();
        // crop covers only the marker, so every pixel has the marker colour
        assert!(crop.data().chunks(3).all(|p| p == [200.0, 150.0, 120.0]));
    }

    #[test]
    fn threshold_must_be_fraction() {
        let img = PixelImage::filled(4, 4, [0.0; 3]);
        assert!(matches!(
            detect_and_crop("x", &img, &mut FullFrameDetector, 1.0),
            Err(Error::Config(_))
        ));
    }
}
