//! Float RGB raster and 8-bit PNG/JPEG interchange.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit-interval RGB intensities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[repr(C)]
pub struct RgbPixel {
    pub r: f32,
    pub g: f32,
    pub b: f32,
}

impl RgbPixel {
    pub const BLACK: RgbPixel = RgbPixel::gray(0.0);

    pub const fn new(r: f32, g: f32, b: f32) -> Self {
        RgbPixel { r, g, b }
    }

    pub const fn gray(v: f32) -> Self {
        RgbPixel { r: v, g: v, b: v }
    }

    #[inline]
    pub fn clamped(self) -> Self {
        RgbPixel {
            r: self.r.clamp(0.0, 1.0),
            g: self.g.clamp(0.0, 1.0),
            b: self.b.clamp(0.0, 1.0),
        }
    }

    pub fn max_abs_diff(self, other: RgbPixel) -> f32 {
        (self.r - other.r)
            .abs()
            .max((self.g - other.g).abs())
            .max((self.b - other.b).abs())
    }
}

/// Row-major RGB image with `width * height` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<RgbPixel>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<RgbPixel>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!(
                "image must have positive dimensions, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: RgbPixel) -> Result<Self> {
        Image::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> RgbPixel,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Image::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[RgbPixel] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [RgbPixel] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> RgbPixel {
        self.pixels[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[RgbPixel] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(RgbPixel) -> RgbPixel) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Largest per-channel absolute difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Image) -> Option<f32> {
        if !self.same_shape(other) {
            return None;
        }
        Some(
            self.pixels
                .iter()
                .zip(&other.pixels)
                .map(|(a, b)| a.max_abs_diff(*b))
                .fold(0.0, f32::max),
        )
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            pixels.extend(self.row(y).iter().rev());
        }
        Image {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        let pixels = img
            .pixels()
            .map(|p| {
                RgbPixel::new(
                    f32::from(p[0]) / 255.0,
                    f32::from(p[1]) / 255.0,
                    f32::from(p[2]) / 255.0,
                )
            })
            .collect();
        Image::new(w as usize, h as usize, pixels)
    }

    /// Re-quantises to 8 bits, rounding half away from zero after clamping.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for (dst, src) in out.pixels_mut().zip(&self.pixels) {
            dst.0 = [quantize(src.r), quantize(src.g), quantize(src.b)];
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let decoded = image::open(path)
            .map_err(|e| Error::Format(format!("cannot decode {}: {e}", path.display())))?;
        Image::from_rgb8(&decoded.to_rgb8())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Format(format!("cannot encode {}: {other}", path.display())),
            })
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    // f32::round rounds half away from zero.
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
