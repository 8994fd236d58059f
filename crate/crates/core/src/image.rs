//! Floating-point RGB images with intensities in `[0, 255]`.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, RgbImage};

use crate::error::{Error, Result};

/// Side of the standardized square face crop.
pub const STANDARD_SIDE: usize = 224;
pub const CHANNELS: usize = 3;

/// A row-major, channel-interleaved RGB image of any size.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl PixelImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::InvalidImage(format!(
                "expected {} values for {width}x{height}x{CHANNELS}, got {}",
                width * height * CHANNELS,
                data.len()
            )));
        }
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !(0.0..=255.0).contains(*v)) {
            return Err(Error::InvalidImage(format!(
                "intensity {v} at index {i} outside [0, 255]"
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data).expect("valid fill")
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&v| v as f32).collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    /// Rounds to the nearest 8-bit value.
    pub fn to_rgb8(&self) -> RgbImage {
        let raw: Vec<u8> = self.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("matching buffer size")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Bilinear sample at continuous pixel coordinates, replicating edges.
    #[inline]
    pub fn sample_clamped(&self, x: f32, y: f32) -> [f32; 3] {
        let max_x = (self.width - 1) as f32;
        let max_y = (self.height - 1) as f32;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] + (p10[c] - p00[c]) * fx;
            let bottom = p01[c] + (p11[c] - p01[c]) * fx;
            out[c] = top + (bottom - top) * fy;
        }
        out
    }

    /// Builds an image by evaluating `f` at every destination pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(|v| v.clamp(0.0, 255.0)));
            }
        }
        Self { width, height, data }
    }

    /// Bilinear resize with half-pixel centers. Same-size resizes return an
    /// exact copy.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        Self::from_fn(width, height, |x, y| {
            let src_x = (x as f32 + 0.5) * sx - 0.5;
            let src_y = (y as f32 + 0.5) * sy - 0.5;
            self.sample_clamped(src_x, src_y)
        })
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidImage(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + width * CHANNELS]);
        }
        Ok(Self { width, height, data })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Writes a lossless PNG, creating parent directories as needed.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// A 224×224×3 face crop.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardImage(PixelImage);

impl StandardImage {
    pub fn new(image: PixelImage) -> Result<Self> {
        if image.width != STANDARD_SIDE || image.height != STANDARD_SIDE {
            return Err(Error::InvalidImage(format!(
                "standard images are {STANDARD_SIDE}x{STANDARD_SIDE}, got {}x{}",
                image.width, image.height
            )));
        }
        Ok(Self(image))
    }

    pub fn from_data(data: Vec<f32>) -> Result<Self> {
        Self::new(PixelImage::new(STANDARD_SIDE, STANDARD_SIDE, data)?)
    }

    pub fn filled(rgb: [f32; 3]) -> Self {
        Self(PixelImage::filled(STANDARD_SIDE, STANDARD_SIDE, rgb))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(PixelImage::load(path)?)
    }

    pub fn as_pixels(&self) -> &PixelImage {
        &self.0
    }

    pub fn into_pixels(self) -> PixelImage {
        self.0
    }
}

impl std::ops::Deref for StandardImage {
    type Target = PixelImage;

    fn deref(&self) -> &PixelImage {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(PixelImage::new(1, 1, vec![0.0, 256.0, 0.0]).is_err());
        assert!(PixelImage::new(1, 1, vec![0.0, f32::NAN, 0.0]).is_err());
        assert!(PixelImage::new(2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn standard_shape_enforced() {
        assert!(StandardImage::new(PixelImage::filled(10, 10, [0.0; 3])).is_err());
        assert!(StandardImage::new(PixelImage::filled(224, 224, [0.0; 3])).is_ok());
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = PixelImage::from_fn(5, 4, |x, y| [x as f32 * 10.0, y as f32 * 20.0, 7.0]);
        assert_eq!(img.resize_bilinear(5, 4), img);
    }

    #[test]
    fn upscale_of_constant_is_constant() {
        let img = PixelImage::filled(3, 3, [12.0, 50.0, 200.0]);
        let up = img.resize_bilinear(7, 9);
        assert!(up.data().chunks(3).all(|p| p == [12.0, 50.0, 200.0]));
    }

    #[test]
    fn downscale_by_two_averages_pairs() {
        // half-pixel centers put each output sample midway between two inputs
        let img = PixelImage::from_fn(4, 1, |x, _| [x as f32 * 10.0; 3]);
        let down = img.resize_bilinear(2, 1);
        assert_eq!(down.data()[0], 5.0);
        assert_eq!(down.data()[3], 25.0);
    }

    #[test]
    fn crop_extracts_region() {
        let img = PixelImage::from_fn(4, 4, |x, y| [x as f32, y as f32, 0.0]);
        let c = img.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.pixel(0, 0), [1.0, 2.0, 0.0]);
        assert_eq!(c.pixel(1, 1), [2.0, 3.0, 0.0]);
        assert!(img.crop(3, 3, 2, 2).is_err());
    }

    #[test]
    fn png_round_trip_is_lossless_for_integers() {
        let dir = tempfile::tempdir().unwrap();
        let img = PixelImage::from_fn(6, 5, |x, y| [(x * 40) as f32, (y * 50) as f32, 255.0]);
        let path = dir.path().join("a/b.png");
        img.save_png(&path).unwrap();
        assert_eq!(PixelImage::load(&path).unwrap(), img);
    }
}
