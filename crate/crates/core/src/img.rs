//! Float RGB images in linear [0, 1] plus the PNG conventions used across
//! the pipeline: 16-bit color frames and renders, 8-bit binary masks, 8-bit
//! grayscale previews.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Dense RGB image, row-major, channels interleaved, linear [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl ImageF {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0.0; (width * height * 3) as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn base(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        ((y * self.width + x) * 3) as usize
    }

    pub fn get(&self, x: u32, y: u32) -> Vector3<f64> {
        let b = self.base(x, y);
        Vector3::new(self.data[b], self.data[b + 1], self.data[b + 2])
    }

    pub fn set(&mut self, x: u32, y: u32, color: &Vector3<f64>) {
        let b = self.base(x, y);
        self.data[b] = color.x;
        self.data[b + 1] = color.y;
        self.data[b + 2] = color.z;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mean squared difference over all channels; dimensions must match.
    pub fn mse(&self, other: &Self) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Config(format!(
                "image size mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let sum: f64 =
            self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(sum / self.data.len() as f64)
    }
}

/// Full-frame binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    pub width: u32,
    pub height: u32,
    /// Row-major; true marks a cornea pixel.
    pub data: Vec<bool>,
}

impl MaskImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![false; (width * height) as usize] }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[(y * self.width + x) as usize] = value;
    }
}

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Write a 16-bit RGB PNG; values clamp to [0, 1] and quantize by rounding,
/// so the round-trip error is at most half a quantization step.
pub fn save_rgb16(img: &ImageF, path: &Path) -> Result<()> {
    let raw: Vec<u16> = img.data.iter().map(|&v| quantize16(v)).collect();
    let buf = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::from_raw(img.width, img.height, raw)
        .expect("buffer sized from image dimensions");
    image::DynamicImage::ImageRgb16(buf).save(path).map_err(|e| Error::io(path, e))
}

/// Read an 8- or 16-bit grayscale/RGB(A) raster as linear [0, 1] floats.
/// 8-bit inputs are upscaled (255 → 1.0) with a logged warning.
pub fn load_image(path: &Path) -> Result<ImageF> {
    let dynamic = image::open(path).map_err(|e| Error::io(path, e))?;
    let eight_bit = dynamic.color().bytes_per_pixel() / dynamic.color().channel_count() == 1;
    if eight_bit {
        log::warn!("{}: 8-bit input upscaled to the 16-bit pipeline", path.display());
    }
    let rgb = dynamic.into_rgb16();
    let (width, height) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&v| v as f64 / 65535.0).collect();
    Ok(ImageF { width, height, data })
}

/// Write a binary mask as an 8-bit grayscale PNG (255 = cornea).
pub fn save_mask(mask: &MaskImage, path: &Path) -> Result<()> {
    let raw: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(mask.width, mask.height, raw)
        .expect("buffer sized from mask dimensions");
    image::DynamicImage::ImageLuma8(buf).save(path).map_err(|e| Error::io(path, e))
}

pub fn load_mask(path: &Path) -> Result<MaskImage> {
    let dynamic = image::open(path).map_err(|e| Error::io(path, e))?;
    let gray = dynamic.into_luma8();
    let (width, height) = gray.dimensions();
    let data = gray.as_raw().iter().map(|&v| v >= 128).collect();
    Ok(MaskImage { width, height, data })
}

/// Write a single-channel [0, 1] buffer (e.g. an accumulation map) as an
/// 8-bit grayscale preview PNG.
pub fn save_gray8(values: &[f64], width: u32, height: u32, path: &Path) -> Result<()> {
    if values.len() != (width * height) as usize {
        return Err(Error::Config(format!(
            "gray preview buffer has {} values for {}x{}",
            values.len(),
            width,
            height
        )));
    }
    let raw: Vec<u8> = values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf =
        image::GrayImage::from_raw(width, height, raw).expect("buffer sized from dimensions");
    image::DynamicImage::ImageLuma8(buf).save(path).map_err(|e| Error::io(path, e))
}
