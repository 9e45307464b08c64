//! The appearance-transformation space: hue rotation plus saturation, lightness
//! and contrast by interpolation/extrapolation against a degenerate image.
//!
//! A transformation is a [`TransformParams`] vector; [`sample_params`] draws one
//! uniformly from a [`TransformSpace`] and [`apply_transform`] applies it. Each
//! primitive clamps its output to `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colorspace::wrap_degrees;
use crate::error::{Error, Result};
use crate::raster::{Image, RgbPixel};
use crate::rng::substream;

/// The four transformation factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factor {
    Hue,
    Saturation,
    Lightness,
    Contrast,
}

impl Factor {
    pub const ALL: [Factor; 4] = [
        Factor::Hue,
        Factor::Saturation,
        Factor::Lightness,
        Factor::Contrast,
    ];

    /// One-letter code: H, S, L, C.
    pub fn code(self) -> char {
        match self {
            Factor::Hue => 'H',
            Factor::Saturation => 'S',
            Factor::Lightness => 'L',
            Factor::Contrast => 'C',
        }
    }

    pub fn identity_value(self) -> f32 {
        match self {
            Factor::Hue => 0.0,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Factor::Hue => "hue",
            Factor::Saturation => "saturation",
            Factor::Lightness => "lightness",
            Factor::Contrast => "contrast",
        };
        f.write_str(name)
    }
}

impl FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "h" | "hue" => Ok(Factor::Hue),
            "s" | "saturation" => Ok(Factor::Saturation),
            "l" | "lightness" => Ok(Factor::Lightness),
            "c" | "contrast" => Ok(Factor::Contrast),
            other => Err(Error::Input(format!("unknown factor '{other}'"))),
        }
    }
}

/// Parameter vector of one transformation. Hue is a shift in degrees, the other
/// three are interpolation factors where 1 means unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub hue_shift: f32,
    pub saturation: f32,
    pub lightness: f32,
    pub contrast: f32,
}

impl TransformParams {
    pub const IDENTITY: TransformParams = TransformParams {
        hue_shift: 0.0,
        saturation: 1.0,
        lightness: 1.0,
        contrast: 1.0,
    };

    pub fn get(&self, factor: Factor) -> f32 {
        match factor {
            Factor::Hue => self.hue_shift,
            Factor::Saturation => self.saturation,
            Factor::Lightness => self.lightness,
            Factor::Contrast => self.contrast,
        }
    }

    pub fn set(&mut self, factor: Factor, value: f32) {
        match factor {
            Factor::Hue => self.hue_shift = value,
            Factor::Saturation => self.saturation = value,
            Factor::Lightness => self.lightness = value,
            Factor::Contrast => self.contrast = value,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == TransformParams::IDENTITY
    }

    /// Factors whose value differs from identity.
    pub fn active_factors(&self) -> Vec<Factor> {
        Factor::ALL
            .into_iter()
            .filter(|&f| self.get(f) != f.identity_value())
            .collect()
    }
}

impl Default for TransformParams {
    fn default() -> Self {
        TransformParams::IDENTITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorRange {
    #[serde(default = "enabled_by_default")]
    pub enabled: bool,
    pub min: f32,
    pub max: f32,
}

fn enabled_by_default() -> bool {
    true
}

impl FactorRange {
    pub fn new(min: f32, max: f32) -> Self {
        FactorRange {
            enabled: true,
            min,
            max,
        }
    }

    pub fn collapsed(value: f32) -> Self {
        FactorRange::new(value, value)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f32 {
        if self.min == self.max {
            self.min
        } else {
            rng.gen_range(self.min..=self.max)
        }
    }
}

/// Luminance weights used for the grayscale and mean-luminance degenerates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LumaWeights {
    pub r: f32,
    pub g: f32,
    pub b: f32,
}

impl LumaWeights {
    pub const REC601: LumaWeights = LumaWeights {
        r: 0.299,
        g: 0.587,
        b: 0.114,
    };

    #[inline]
    pub fn luma(&self, p: RgbPixel) -> f32 {
        self.r * p.r + self.g * p.g + self.b * p.b
    }
}

impl Default for LumaWeights {
    fn default() -> Self {
        LumaWeights::REC601
    }
}

/// How a parameter vector is turned into pixels: primitive order and luminance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Pipeline {
    pub order: [Factor; 4],
    pub luma: LumaWeights,
}

impl Pipeline {
    pub const DEFAULT_ORDER: [Factor; 4] = Factor::ALL;

    pub fn with_order(order: [Factor; 4]) -> Result<Self> {
        let mut seen = order.to_vec();
        seen.sort();
        seen.dedup();
        if seen.len() != 4 {
            return Err(Error::Input(format!(
                "transform order must list each factor once, got {order:?}"
            )));
        }
        Ok(Pipeline {
            order,
            luma: LumaWeights::default(),
        })
    }

    /// Applies every non-identity factor in `self.order`.
    pub fn apply(&self, img: &Image, t: &TransformParams) -> Image {
        let mut out = img.clone();
        self.apply_in_place(&mut out, t);
        out
    }

    pub fn apply_in_place(&self, img: &mut Image, t: &TransformParams) {
        if self.order == Self::DEFAULT_ORDER {
            fused_default_order(img, t, self.luma);
            return;
        }
        for factor in self.order {
            let value = t.get(factor);
            if value == factor.identity_value() {
                continue;
            }
            match factor {
                Factor::Hue => shift_hue_in_place(img, value),
                Factor::Saturation => saturation_in_place(img, value, self.luma),
                Factor::Lightness => lightness_in_place(img, value),
                Factor::Contrast => contrast_in_place(img, value, self.luma),
            }
        }
    }
}

impl Default for Pipeline {
    fn default() -> Self {
        Pipeline {
            order: Self::DEFAULT_ORDER,
            luma: LumaWeights::default(),
        }
    }
}

/// Per-factor ranges and enable flags; disabled factors always sample identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformSpace {
    pub hue: FactorRange,
    pub saturation: FactorRange,
    pub lightness: FactorRange,
    pub contrast: FactorRange,
    #[serde(default)]
    pub pipeline: Pipeline,
}

impl TransformSpace {
    pub fn none() -> Self {
        let mut space = TransformSpace::default();
        for f in Factor::ALL {
            space.range_mut(f).enabled = false;
        }
        space
    }

    /// Default ranges with only `factors` enabled.
    pub fn only(factors: &[Factor]) -> Self {
        let mut space = TransformSpace::default();
        for f in Factor::ALL {
            space.range_mut(f).enabled = factors.contains(&f);
        }
        space
    }

    pub fn range(&self, factor: Factor) -> &FactorRange {
        match factor {
            Factor::Hue => &self.hue,
            Factor::Saturation => &self.saturation,
            Factor::Lightness => &self.lightness,
            Factor::Contrast => &self.contrast,
        }
    }

    pub fn range_mut(&mut self, factor: Factor) -> &mut FactorRange {
        match factor {
            Factor::Hue => &mut self.hue,
            Factor::Saturation => &mut self.saturation,
            Factor::Lightness => &mut self.lightness,
            Factor::Contrast => &mut self.contrast,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Pipeline::with_order(self.pipeline.order)?;
        for f in Factor::ALL {
            let r = self.range(f);
            if !(r.min.is_finite() && r.max.is_finite()) || r.min > r.max {
                return Err(Error::Input(format!(
                    "{f} range [{}, {}] is not a valid closed interval",
                    r.min, r.max
                )));
            }
        }
        Ok(())
    }

    pub fn is_identity_only(&self) -> bool {
        Factor::ALL.iter().all(|&f| {
            let r = self.range(f);
            !r.enabled || (r.min == f.identity_value() && r.max == f.identity_value())
        })
    }
}

impl Default for TransformSpace {
    fn default() -> Self {
        TransformSpace {
            hue: FactorRange::new(-18.0, 18.0),
            saturation: FactorRange::new(0.6, 1.4),
            lightness: FactorRange::new(0.6, 1.4),
            contrast: FactorRange::new(0.6, 1.4),
            pipeline: Pipeline::default(),
        }
    }
}

#[inline]
fn mix_channel(degenerate: f32, original: f32, alpha: f32) -> f32 {
    ((1.0 - alpha) * degenerate + alpha * original).clamp(0.0, 1.0)
}

#[inline]
fn mix_pixel(degenerate: RgbPixel, original: RgbPixel, alpha: f32) -> RgbPixel {
    RgbPixel {
        r: mix_channel(degenerate.r, original.r, alpha),
        g: mix_channel(degenerate.g, original.g, alpha),
        b: mix_channel(degenerate.b, original.b, alpha),
    }
}

#[inline]
fn mix_scalar(degenerate: f32, p: RgbPixel, alpha: f32) -> RgbPixel {
    let base = (1.0 - alpha) * degenerate;
    RgbPixel {
        r: (base + alpha * p.r).clamp(0.0, 1.0),
        g: (base + alpha * p.g).clamp(0.0, 1.0),
        b: (base + alpha * p.b).clamp(0.0, 1.0),
    }
}

/// Hexcone hue rotation by `sectors` (degrees / 60, in `[0, 6)`), computed
/// directly in RGB: max and min are kept and each channel is re-placed on the
/// hexagon. Branch-free so the pixel loops vectorise.
#[inline]
fn hue_pixel(p: RgbPixel, sectors: f32) -> RgbPixel {
    let RgbPixel { r, g, b } = p;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let inv = if delta > 0.0 { 1.0 / delta } else { 0.0 };
    let h = if max == r {
        (g - b) * inv
    } else if max == g {
        (b - r) * inv + 2.0
    } else {
        (r - g) * inv + 4.0
    };
    let mut h = h + sectors;
    h = if h < 0.0 { h + 6.0 } else { h };
    h = if h >= 6.0 { h - 6.0 } else { h };
    let channel = |n: f32| {
        let k = n + h;
        let k = if k >= 6.0 { k - 6.0 } else { k };
        let t = k.min(4.0 - k).clamp(0.0, 1.0);
        (max - delta * t).clamp(0.0, 1.0)
    };
    RgbPixel {
        r: channel(5.0),
        g: channel(3.0),
        b: channel(1.0),
    }
}

#[inline]
fn hue_sectors(degrees: f32) -> f32 {
    wrap_degrees(degrees) / 60.0
}

#[inline]
fn saturation_pixel(p: RgbPixel, factor: f32, luma: LumaWeights) -> RgbPixel {
    mix_scalar(luma.luma(p), p, factor)
}

#[inline]
fn lightness_pixel(p: RgbPixel, factor: f32) -> RgbPixel {
    mix_scalar(0.0, p, factor)
}

/// Pixels are processed in planar blocks of this many so the per-channel loops
/// vectorise. Per-pixel arithmetic is identical to the scalar definitions.
const BLOCK: usize = 64;

struct Planes {
    r: [f32; BLOCK],
    g: [f32; BLOCK],
    b: [f32; BLOCK],
    n: usize,
}

impl Planes {
    fn new() -> Self {
        Planes {
            r: [0.0; BLOCK],
            g: [0.0; BLOCK],
            b: [0.0; BLOCK],
            n: 0,
        }
    }

    #[inline]
    fn load(&mut self, px: &[RgbPixel]) {
        self.n = px.len();
        for (i, p) in px.iter().enumerate() {
            self.r[i] = p.r;
            self.g[i] = p.g;
            self.b[i] = p.b;
        }
    }

    #[inline]
    fn store(&self, px: &mut [RgbPixel]) {
        for (i, p) in px.iter_mut().enumerate() {
            *p = RgbPixel::new(self.r[i], self.g[i], self.b[i]);
        }
    }

    #[inline]
    fn map(&mut self, f: impl Fn(RgbPixel) -> RgbPixel) {
        for i in 0..self.n {
            let q = f(RgbPixel::new(self.r[i], self.g[i], self.b[i]));
            self.r[i] = q.r;
            self.g[i] = q.g;
            self.b[i] = q.b;
        }
    }

    /// Luminance sum over the block, in f64 with eight interleaved accumulators.
    #[inline]
    fn luma_sum(&self, luma: LumaWeights) -> [f64; 8] {
        let mut acc = [0.0f64; 8];
        let mut lum = [0.0f32; BLOCK];
        for i in 0..BLOCK {
            lum[i] = luma.r * self.r[i] + luma.g * self.g[i] + luma.b * self.b[i];
        }
        for lanes in lum[..self.n].chunks(8) {
            for (a, &v) in acc.iter_mut().zip(lanes) {
                *a += f64::from(v);
            }
        }
        acc
    }
}

fn finish_mean(acc: [f64; 8], n: usize) -> f32 {
    let sum = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    (sum / n as f64) as f32
}

fn for_each_block(img: &mut Image, mut f: impl FnMut(&mut Planes)) {
    let mut planes = Planes::new();
    for chunk in img.pixels_mut().chunks_mut(BLOCK) {
        planes.load(chunk);
        f(&mut planes);
        planes.store(chunk);
    }
}

/// Mean luminance, accumulated in f64.
pub fn mean_luminance(img: &Image, luma: LumaWeights) -> f32 {
    let mut acc = [0.0f64; 8];
    let mut planes = Planes::new();
    for chunk in img.pixels().chunks(BLOCK) {
        planes.load(chunk);
        for (a, b) in acc.iter_mut().zip(planes.luma_sum(luma)) {
            *a += b;
        }
    }
    finish_mean(acc, img.len())
}

fn shift_hue_in_place(img: &mut Image, degrees: f32) {
    let sectors = hue_sectors(degrees);
    if sectors == 0.0 {
        return;
    }
    for_each_block(img, |pl| pl.map(|p| hue_pixel(p, sectors)));
}

fn saturation_in_place(img: &mut Image, factor: f32, luma: LumaWeights) {
    for_each_block(img, |pl| pl.map(|p| saturation_pixel(p, factor, luma)));
}

fn lightness_in_place(img: &mut Image, factor: f32) {
    for_each_block(img, |pl| pl.map(|p| lightness_pixel(p, factor)));
}

fn contrast_in_place(img: &mut Image, factor: f32, luma: LumaWeights) {
    let mean = mean_luminance(img, luma);
    for_each_block(img, |pl| pl.map(|p| mix_scalar(mean, p, factor)));
}

/// Hue -> saturation -> lightness -> contrast in two passes over the pixels.
/// Produces the same bits as running the four primitives one after another.
fn fused_default_order(img: &mut Image, t: &TransformParams, luma: LumaWeights) {
    let hue = hue_sectors(t.hue_shift);
    let do_hue = hue != 0.0;
    let do_sat = t.saturation != 1.0;
    let do_light = t.lightness != 1.0;
    let do_contrast = t.contrast != 1.0;
    if !(do_hue || do_sat || do_light || do_contrast) {
        return;
    }

    let mut acc = [0.0f64; 8];
    for_each_block(img, |pl| {
        if do_hue && do_sat && do_light {
            pl.map(|p| {
                lightness_pixel(saturation_pixel(hue_pixel(p, hue), t.saturation, luma), t.lightness)
            });
        } else {
            if do_hue {
                pl.map(|p| hue_pixel(p, hue));
            }
            if do_sat {
                pl.map(|p| saturation_pixel(p, t.saturation, luma));
            }
            if do_light {
                pl.map(|p| lightness_pixel(p, t.lightness));
            }
        }
        if do_contrast {
            for (a, b) in acc.iter_mut().zip(pl.luma_sum(luma)) {
                *a += b;
            }
        }
    });
    if do_contrast {
        let mean = finish_mean(acc, img.len());
        for_each_block(img, |pl| pl.map(|p| mix_scalar(mean, p, t.contrast)));
    }
}

/// Rotates every pixel's hue by `degrees` (cyclic); saturation and value are kept.
pub fn shift_hue(img: &Image, degrees: f32) -> Image {
    let mut out = img.clone();
    shift_hue_in_place(&mut out, degrees);
    out
}

/// `clamp((1 - alpha) * degenerate + alpha * original)` per channel.
/// `alpha > 1` extrapolates away from the degenerate image.
pub fn interpolate(degenerate: &Image, original: &Image, alpha: f32) -> Result<Image> {
    if !degenerate.same_shape(original) {
        return Err(Error::Shape(format!(
            "cannot interpolate {}x{} with {}x{}",
            degenerate.width(),
            degenerate.height(),
            original.width(),
            original.height()
        )));
    }
    let pixels = degenerate
        .pixels()
        .iter()
        .zip(original.pixels())
        .map(|(&d, &o)| mix_pixel(d, o, alpha))
        .collect();
    Image::new(original.width(), original.height(), pixels)
}

/// Luminance replicated across the three channels.
pub fn grayscale(img: &Image, luma: LumaWeights) -> Image {
    img.map(|p| RgbPixel::gray(luma.luma(p)))
}

pub fn adjust_saturation(img: &Image, factor: f32) -> Image {
    adjust_saturation_with(img, factor, LumaWeights::default())
}

pub fn adjust_saturation_with(img: &Image, factor: f32, luma: LumaWeights) -> Image {
    let mut out = img.clone();
    saturation_in_place(&mut out, factor, luma);
    out
}

/// Interpolation against black, i.e. a clamped per-channel scale.
pub fn adjust_lightness(img: &Image, factor: f32) -> Image {
    let mut out = img.clone();
    lightness_in_place(&mut out, factor);
    out
}

/// Interpolation against a flat image at the input's mean luminance.
pub fn adjust_contrast(img: &Image, factor: f32) -> Image {
    adjust_contrast_with(img, factor, LumaWeights::default())
}

pub fn adjust_contrast_with(img: &Image, factor: f32, luma: LumaWeights) -> Image {
    let mut out = img.clone();
    contrast_in_place(&mut out, factor, luma);
    out
}

/// Draws each enabled factor independently and uniformly from its range.
pub fn sample_params(space: &TransformSpace, rng: &mut impl Rng) -> TransformParams {
    let mut t = TransformParams::IDENTITY;
    for f in Factor::ALL {
        let range = space.range(f);
        if range.enabled {
            t.set(f, range.sample(rng));
        }
    }
    t
}

/// Applies `t` with the default pipeline (hue, saturation, lightness, contrast).
pub fn apply_transform(img: &Image, t: &TransformParams) -> Image {
    Pipeline::default().apply(img, t)
}

/// Parameters for image `index` of a batch augmented under `seed`.
pub fn batch_params(space: &TransformSpace, seed: u64, index: usize) -> TransformParams {
    sample_params(space, &mut substream(seed, index as u64))
}

/// Transforms each image with its own parameters drawn from substream
/// `(seed, index)`. Runs on the current rayon pool; output order and bits do
/// not depend on the number of workers.
pub fn augment_batch(imgs: &[Image], space: &TransformSpace, seed: u64) -> Vec<Image> {
    augment_batch_with_params(imgs, space, seed)
        .into_iter()
        .map(|(img, _)| img)
        .collect()
}

pub fn augment_batch_with_params(
    imgs: &[Image],
    space: &TransformSpace,
    seed: u64,
) -> Vec<(Image, TransformParams)> {
    imgs.par_iter()
        .enumerate()
        .map(|(i, img)| {
            let t = batch_params(space, seed, i);
            (space.pipeline.apply(img, &t), t)
        })
        .collect()
}

/// In-place variant of [`augment_batch`].
pub fn augment_batch_in_place(imgs: &mut [Image], space: &TransformSpace, seed: u64) {
    imgs.par_iter_mut().enumerate().for_each(|(i, img)| {
        let t = batch_params(space, seed, i);
        space.pipeline.apply_in_place(img, &t);
    });
}
