//! Identity-labelled, camera-tagged image collections and the geometric
//! preprocessing applied before descriptor extraction.
//!
//! Filenames follow `<identity>_c<camera>_<suffix>.<ext>` (Market-1501 style).
//! A JSON-lines manifest with `path`, `identity` and `camera` fields can be
//! supplied instead when files are named differently.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Image, RgbPixel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            other => Err(Error::Input(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: Image,
    pub identity: u32,
    pub camera: u32,
    pub source_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

/// Immutable labelled collection. Original identity labels are mapped onto the
/// contiguous class indices `0..n_identities()` in ascending label order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<LabeledSample>,
    split: Split,
    registry: Vec<u32>,
    classes: Vec<usize>,
    skipped: Vec<SkippedFile>,
}

impl LabeledDataset {
    pub fn new(samples: Vec<LabeledSample>, split: Split) -> Self {
        let mut registry: Vec<u32> = samples.iter().map(|s| s.identity).collect();
        registry.sort_unstable();
        registry.dedup();
        let classes = samples
            .iter()
            .map(|s| registry.binary_search(&s.identity).expect("registered"))
            .collect();
        LabeledDataset {
            samples,
            split,
            registry,
            classes,
            skipped: Vec::new(),
        }
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_identities(&self) -> usize {
        self.registry.len()
    }

    /// Contiguous class index of sample `i`.
    pub fn class_of(&self, i: usize) -> usize {
        self.classes[i]
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Original identity label for a class index.
    pub fn identity_of_class(&self, class: usize) -> u32 {
        self.registry[class]
    }

    pub fn identities(&self) -> &[u32] {
        &self.registry
    }

    pub fn skipped(&self) -> &[SkippedFile] {
        &self.skipped
    }

    pub fn images(&self) -> Vec<&Image> {
        self.samples.iter().map(|s| &s.image).collect()
    }

    /// Samples whose identity is in `keep`, order preserved.
    pub fn with_identities(&self, keep: &[u32]) -> LabeledDataset {
        let samples = self
            .samples
            .iter()
            .filter(|s| keep.contains(&s.identity))
            .cloned()
            .collect();
        LabeledDataset::new(samples, self.split)
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut per_identity = BTreeMap::new();
        let mut per_camera = BTreeMap::new();
        for s in &self.samples {
            *per_identity.entry(s.identity).or_insert(0usize) += 1;
            *per_camera.entry(s.camera).or_insert(0usize) += 1;
        }
        DatasetSummary {
            split: self.split,
            samples: self.samples.len(),
            identities: self.registry.len(),
            per_identity,
            per_camera,
            skipped: self.skipped.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub split: Split,
    pub samples: usize,
    pub identities: usize,
    pub per_identity: BTreeMap<u32, usize>,
    pub per_camera: BTreeMap<u32, usize>,
    pub skipped: Vec<SkippedFile>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NamingRule {
    /// `<identity>_c<camera>_<suffix>.<ext>`
    Filename,
    /// JSON-lines manifest; relative paths resolve against the ingested directory.
    Manifest(PathBuf),
}

#[derive(Debug, Deserialize)]
struct ManifestLine {
    path: String,
    identity: u32,
    camera: u32,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Parses `<identity>_c<camera>_<suffix>.<ext>`.
pub fn parse_filename(name: &str) -> Option<(u32, u32)> {
    let (stem, ext) = name.rsplit_once('.')?;
    if !IMAGE_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()) {
        return None;
    }
    let mut parts = stem.splitn(3, '_');
    let identity = parts.next()?;
    let camera = parts.next()?.strip_prefix('c')?;
    let suffix = parts.next()?;
    if suffix.is_empty()
        || identity.is_empty()
        || camera.is_empty()
        || !identity.bytes().all(|b| b.is_ascii_digit())
        || !camera.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    Some((identity.parse().ok()?, camera.parse().ok()?))
}

/// Loads every labelled image under `dir` (non-recursive), sorted by path.
/// Files that fail to decode are skipped with a warning and listed in
/// [`LabeledDataset::skipped`].
pub fn ingest_directory(dir: &Path, rule: &NamingRule, split: Split) -> Result<LabeledDataset> {
    let mut entries: Vec<(PathBuf, u32, u32)> = match rule {
        NamingRule::Filename => {
            let listing = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
            let mut files = Vec::new();
            for entry in listing {
                let path = entry.map_err(|e| Error::io(dir, e))?.path();
                if path.is_file() && has_image_extension(&path) {
                    files.push(path);
                }
            }
            files
                .into_iter()
                .map(|path| {
                    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                    match parse_filename(name) {
                        Some((id, cam)) => Ok((path.clone(), id, cam)),
                        None => Err(Error::Ingest(format!(
                            "'{}' does not match <identity>_c<camera>_<suffix>.<ext>",
                            path.display()
                        ))),
                    }
                })
                .collect::<Result<_>>()?
        }
        NamingRule::Manifest(manifest) => {
            let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
            let mut out = Vec::new();
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ManifestLine = serde_json::from_str(line).map_err(|e| {
                    Error::Format(format!("{} line {}: {e}", manifest.display(), n + 1))
                })?;
                let path = Path::new(&rec.path);
                let path = if path.is_absolute() {
                    path.to_path_buf()
                } else {
                    dir.join(path)
                };
                out.push((path, rec.identity, rec.camera));
            }
            out
        }
    };
    entries.sort_by(|a, b| a.0.cmp(&b.0));

    let decoded: Vec<std::result::Result<LabeledSample, SkippedFile>> = entries
        .par_iter()
        .map(|(path, identity, camera)| match Image::load(path) {
            Ok(image) => Ok(LabeledSample {
                image,
                identity: *identity,
                camera: *camera,
                source_path: path.display().to_string(),
            }),
            Err(e) => Err(SkippedFile {
                path: path.display().to_string(),
                reason: e.to_string(),
            }),
        })
        .collect();

    let mut samples = Vec::with_capacity(decoded.len());
    let mut skipped = Vec::new();
    for item in decoded {
        match item {
            Ok(s) => samples.push(s),
            Err(skip) => {
                log::warn!("skipping {}: {}", skip.path, skip.reason);
                skipped.push(skip);
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::Ingest(format!(
            "no readable labelled images in {}",
            dir.display()
        )));
    }
    let mut dataset = LabeledDataset::new(samples, split);
    dataset.skipped = skipped;
    Ok(dataset)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal flip probability in train mode.
    pub flip_prob: f64,
    /// Zero padding on each side before the random crop, in pixels.
    pub crop_pad: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            width: 128,
            height: 384,
            flip_prob: 0.5,
            crop_pad: 10,
        }
    }
}

/// Resizes to `cfg.width x cfg.height`. In train mode the image is first
/// flipped with probability `cfg.flip_prob` and randomly cropped after zero
/// padding by `cfg.crop_pad` pixels per side.
pub fn preprocess(
    img: &Image,
    cfg: &PreprocessConfig,
    train_mode: bool,
    rng: &mut impl Rng,
) -> Result<Image> {
    if cfg.width == 0 || cfg.height == 0 {
        return Err(Error::Shape(format!(
            "target size {}x{} must be positive",
            cfg.width, cfg.height
        )));
    }
    if !train_mode {
        return resize_bilinear(img, cfg.width, cfg.height);
    }
    let flip = rng.gen_bool(cfg.flip_prob.clamp(0.0, 1.0));
    let pad = cfg.crop_pad;
    let dx = rng.gen_range(0..=2 * pad);
    let dy = rng.gen_range(0..=2 * pad);
    let base = if flip { img.flip_horizontal() } else { img.clone() };
    let cropped = if pad == 0 {
        base
    } else {
        pad_crop(&base, pad, dx, dy)?
    };
    resize_bilinear(&cropped, cfg.width, cfg.height)
}

/// Zero-pads by `pad` on every side and crops the original size at `(dx, dy)`
/// within the padded canvas.
fn pad_crop(img: &Image, pad: usize, dx: usize, dy: usize) -> Result<Image> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let (ox, oy) = (dx as isize - pad as isize, dy as isize - pad as isize);
    Image::from_fn(img.width(), img.height(), |x, y| {
        let sx = x as isize + ox;
        let sy = y as isize + oy;
        if (0..w).contains(&sx) && (0..h).contains(&sy) {
            img.get(sx as usize, sy as usize)
        } else {
            RgbPixel::BLACK
        }
    })
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(img: &Image, width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(Error::Shape(format!(
            "target size {width}x{height} must be positive"
        )));
    }
    if img.width() == width && img.height() == height {
        return Ok(img.clone());
    }
    let sx = img.width() as f32 / width as f32;
    let sy = img.height() as f32 / height as f32;
    let axis = |dst: usize, scale: f32, len: usize| -> (usize, usize, f32) {
        let src = ((dst as f32 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f32)
    };
    let cols: Vec<_> = (0..width).map(|x| axis(x, sx, img.width())).collect();
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = axis(y, sy, img.height());
        let (r0, r1) = (img.row(y0), img.row(y1));
        for &(x0, x1, fx) in &cols {
            let lerp = |a: RgbPixel, b: RgbPixel, t: f32| RgbPixel {
                r: a.r + (b.r - a.r) * t,
                g: a.g + (b.g - a.g) * t,
                b: a.b + (b.b - a.b) * t,
            };
            let top = lerp(r0[x0], r0[x1], fx);
            let bottom = lerp(r1[x0], r1[x1], fx);
            pixels.push(lerp(top, bottom, fy));
        }
    }
    Image::new(width, height, pixels)
}
