//! Synthetic "person" images for exercising the pipeline without licensed data.
//!
//! Each identity is a stack of coloured rectangles (hair, face, upper and lower
//! garment, shoes, an optional bag) on a camera-dependent background. Samples of
//! an identity vary in position, colour jitter, camera illumination and pixel
//! noise. The test domain (query + gallery) uses disjoint identities and has a
//! fixed appearance offset applied to every image.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorspace::{hsv_to_rgb, HsvPixel};
use crate::dataset::{LabeledDataset, LabeledSample, Split};
use crate::error::{Error, Result};
use crate::raster::{Image, RgbPixel};
use crate::rng::{mix, substream};
use crate::transform::{apply_transform, TransformParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub train_identities: usize,
    pub test_identities: usize,
    pub images_per_identity: usize,
    pub cameras: usize,
    pub width: usize,
    pub height: usize,
    /// Appearance offset applied to every query/gallery image.
    pub target_offset: TransformParams,
    /// Per-image colour jitter of garments, in hue degrees.
    pub hue_jitter: f32,
    /// Garment hues are `period * k + band` for integer `k` and `band` drawn
    /// from `garment_hue_band`. Period 360 with band [0, 360) is unconstrained.
    pub garment_hue_period: f32,
    pub garment_hue_band: [f32; 2],
    /// Saturation and value ranges of garment colours.
    pub garment_saturation: [f32; 2],
    pub garment_value: [f32; 2],
    /// Half-widths of the per-camera hue (degrees) and contrast casts.
    pub camera_hue: f32,
    pub camera_contrast: f32,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            train_identities: 48,
            test_identities: 300,
            images_per_identity: 8,
            cameras: 3,
            width: 24,
            height: 48,
            target_offset: TransformParams {
                hue_shift: 15.0,
                saturation: 1.0,
                lightness: 1.0,
                contrast: 0.7,
            },
            hue_jitter: 4.0,
            garment_hue_period: 90.0,
            garment_hue_band: [25.0, 40.0],
            garment_saturation: [0.35, 0.95],
            garment_value: [0.7, 0.95],
            camera_hue: 8.0,
            camera_contrast: 0.35,
            seed: 2019,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub train: LabeledDataset,
    pub query: LabeledDataset,
    pub gallery: LabeledDataset,
}

#[derive(Debug, Clone, Copy)]
struct Look {
    hair: HsvPixel,
    skin: HsvPixel,
    upper: HsvPixel,
    lower: HsvPixel,
    shoes: HsvPixel,
    bag: Option<HsvPixel>,
    /// Fraction of the height where the upper garment ends.
    waist: f32,
    /// Person width as a fraction of the image width.
    build: f32,
}

fn garment(cfg: &FixtureConfig, rng: &mut ChaCha8Rng) -> HsvPixel {
    let slots = (360.0 / cfg.garment_hue_period).floor().max(1.0) as u32;
    let [lo, hi] = cfg.garment_hue_band;
    HsvPixel::new(
        cfg.garment_hue_period * rng.gen_range(0..slots) as f32 + rng.gen_range(lo..hi),
        rng.gen_range(cfg.garment_saturation[0]..cfg.garment_saturation[1]),
        rng.gen_range(cfg.garment_value[0]..cfg.garment_value[1]),
    )
}

fn look(cfg: &FixtureConfig, rng: &mut ChaCha8Rng) -> Look {
    Look {
        hair: HsvPixel::new(rng.gen_range(15.0..45.0), rng.gen_range(0.2..0.7), rng.gen_range(0.05..0.45)),
        skin: HsvPixel::new(rng.gen_range(15.0..35.0), rng.gen_range(0.25..0.55), rng.gen_range(0.5..0.95)),
        upper: garment(cfg, rng),
        lower: garment(cfg, rng),
        shoes: HsvPixel::new(rng.gen_range(0.0..360.0), rng.gen_range(0.0..0.4), rng.gen_range(0.05..0.35)),
        bag: if rng.gen_bool(0.5) { Some(garment(cfg, rng)) } else { None },
        waist: rng.gen_range(0.5..0.62),
        build: rng.gen_range(0.45..0.65),
    }
}

fn jitter(c: HsvPixel, hue: f32, rng: &mut ChaCha8Rng) -> HsvPixel {
    let dh = if hue > 0.0 { rng.gen_range(-hue..=hue) } else { 0.0 };
    HsvPixel::new(
        c.h + dh,
        (c.s + rng.gen_range(-0.04..=0.04)).clamp(0.0, 1.0),
        (c.v + rng.gen_range(-0.04..=0.04)).clamp(0.0, 1.0),
    )
}

fn render(look: &Look, camera: usize, cfg: &FixtureConfig, rng: &mut ChaCha8Rng) -> Result<Image> {
    let (w, h) = (cfg.width as f32, cfg.height as f32);
    let background = HsvPixel::new(rng.gen_range(0.0..360.0), rng.gen_range(0.0..0.15), rng.gen_range(0.35..0.75));

    let hue = cfg.hue_jitter;
    let hair = hsv_to_rgb(jitter(look.hair, hue, rng));
    let skin = hsv_to_rgb(jitter(look.skin, hue, rng));
    let upper = hsv_to_rgb(jitter(look.upper, hue, rng));
    let lower = hsv_to_rgb(jitter(look.lower, hue, rng));
    let shoes = hsv_to_rgb(jitter(look.shoes, hue, rng));
    let bag = look.bag.map(|b| hsv_to_rgb(jitter(b, hue, rng)));
    let bg = hsv_to_rgb(background);

    let dx: f32 = rng.gen_range(-0.08..0.08) * w;
    let dy: f32 = rng.gen_range(-0.03..0.03) * h;
    let half = 0.5 * look.build * w;
    let cx = 0.5 * w + dx;
    let bag_left = rng.gen_bool(0.5);
    let noise = 0.02f32;
    let mut pixel_rng = substream(rng.gen(), 0);

    Image::from_fn(cfg.width, cfg.height, |x, y| {
        let (fx, fy) = (x as f32 + 0.5, (y as f32 + 0.5 - dy) / h);
        let rel = (fx - cx) / half;
        let c = if fy < 0.0 || fy >= 1.0 {
            bg
        } else if fy < 0.06 {
            if rel.abs() < 0.45 { hair } else { bg }
        } else if fy < 0.16 {
            if rel.abs() < 0.4 { skin } else { bg }
        } else if fy < look.waist {
            let in_bag = bag.is_some() && fy > 0.3 && fy < 0.45 && if bag_left { (-1.15..-0.6).contains(&rel) } else { (0.6..1.15).contains(&rel) };
            if in_bag {
                bag.unwrap()
            } else if rel.abs() < 1.0 {
                upper
            } else {
                bg
            }
        } else if fy < 0.93 {
            if rel.abs() < 0.8 && !(fy > look.waist + 0.08 && rel.abs() < 0.08) { lower } else { bg }
        } else if rel.abs() < 0.85 {
            shoes
        } else {
            bg
        };
        let n = |rng: &mut ChaCha8Rng| rng.gen_range(-noise..=noise);
        RgbPixel::new(
            c.r + n(&mut pixel_rng),
            c.g + n(&mut pixel_rng),
            c.b + n(&mut pixel_rng),
        )
        .clamped()
    })
    .map(|img| apply_transform(&img, &camera_cast(camera, cfg)))
}

fn camera_cast(camera: usize, cfg: &FixtureConfig) -> TransformParams {
    let mut rng = substream(mix(cfg.seed, 0xCA4E), camera as u64);
    let spread = |rng: &mut ChaCha8Rng, w: f32| if w > 0.0 { rng.gen_range(-w..=w) } else { 0.0 };
    TransformParams {
        hue_shift: spread(&mut rng, cfg.camera_hue),
        saturation: 1.0,
        lightness: 1.0 + spread(&mut rng, 0.1),
        contrast: 1.0 + spread(&mut rng, cfg.camera_contrast),
    }
}

fn identity_samples(
    label: u32,
    look: &Look,
    cfg: &FixtureConfig,
    offset: Option<&TransformParams>,
) -> Result<Vec<LabeledSample>> {
    (0..cfg.images_per_identity)
        .map(|n| {
            let camera = n % cfg.cameras;
            let mut rng = substream(mix(cfg.seed, u64::from(label)), n as u64);
            let mut image = render(look, camera, cfg, &mut rng)?;
            if let Some(t) = offset {
                image = apply_transform(&image, t);
            }
            Ok(LabeledSample {
                image,
                identity: label,
                camera: camera as u32 + 1,
                source_path: format!("{label:04}_c{}_{n:03}.png", camera + 1),
            })
        })
        .collect()
}

/// First test-domain identity label; train identities are numbered from 1.
pub const TEST_LABEL_BASE: u32 = 1001;

pub fn generate(cfg: &FixtureConfig) -> Result<Fixture> {
    if cfg.train_identities < 2 || cfg.test_identities < 1 {
        return Err(Error::Input("fixture needs >= 2 train and >= 1 test identities".into()));
    }
    if cfg.images_per_identity < 2 || cfg.cameras < 2 || cfg.width < 4 || cfg.height < 8 {
        return Err(Error::Input(
            "fixture needs >= 2 images per identity, >= 2 cameras and images of at least 4x8".into(),
        ));
    }
    let mut look_rng = substream(cfg.seed, 0x100C);
    let mut train = Vec::new();
    for k in 0..cfg.train_identities {
        let l = look(cfg, &mut look_rng);
        train.extend(identity_samples(k as u32 + 1, &l, cfg, None)?);
    }
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    for k in 0..cfg.test_identities {
        let l = look(cfg, &mut look_rng);
        let samples = identity_samples(TEST_LABEL_BASE + k as u32, &l, cfg, Some(&cfg.target_offset))?;
        for (n, s) in samples.into_iter().enumerate() {
            if n == 0 {
                query.push(s);
            } else {
                gallery.push(s);
            }
        }
    }
    Ok(Fixture {
        train: LabeledDataset::new(train, Split::Train),
        query: LabeledDataset::new(query, Split::Query),
        gallery: LabeledDataset::new(gallery, Split::Gallery),
    })
}

/// Writes `train/`, `query/` and `gallery/` PNG directories under `root`.
pub fn write(fixture: &Fixture, root: &Path) -> Result<()> {
    for ds in [&fixture.train, &fixture.query, &fixture.gallery] {
        let dir = root.join(ds.split().to_string());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for s in ds.samples() {
            s.image.save_png(&dir.join(&s.source_path))?;
        }
    }
    Ok(())
}
