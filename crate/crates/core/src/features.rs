//! Striped HSV-histogram descriptors.
//!
//! An image is cut into `parts` horizontal stripes (top to bottom, leftover rows
//! go to the bottom stripe). Each stripe and the whole image get a hard-binned
//! histogram per HSV channel, L2-normalised; the descriptor is the
//! concatenation `[part 1, ..., part m, global]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colorspace::rgb_to_hsv;
use crate::dataset::{resize_bilinear, PreprocessConfig};
use crate::error::{Error, Result};
use crate::raster::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorConfig {
    pub parts: usize,
    pub bins_per_channel: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            parts: 6,
            bins_per_channel: 8,
        }
    }
}

impl DescriptorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.parts < 1 {
            return Err(Error::Input("descriptor needs at least one part".into()));
        }
        if self.bins_per_channel < 2 {
            return Err(Error::Input("descriptor needs at least two bins per channel".into()));
        }
        Ok(())
    }

    /// Length of one part (or the global) segment.
    pub fn segment_len(&self) -> usize {
        3 * self.bins_per_channel
    }

    pub fn segments(&self) -> usize {
        self.parts + 1
    }

    pub fn dimension(&self) -> usize {
        self.segments() * self.segment_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    values: Vec<f32>,
    segment_len: usize,
}

impl Descriptor {
    pub fn from_values(values: Vec<f32>, segment_len: usize) -> Result<Self> {
        if segment_len == 0 || values.len() % segment_len != 0 || values.len() < 2 * segment_len {
            return Err(Error::Shape(format!(
                "{} values cannot be split into part segments of {segment_len}",
                values.len()
            )));
        }
        Ok(Descriptor {
            values,
            segment_len,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn segment_len(&self) -> usize {
        self.segment_len
    }

    pub fn n_parts(&self) -> usize {
        self.values.len() / self.segment_len - 1
    }

    /// Segment `i`: parts are `0..n_parts()`, the global segment is last.
    pub fn segment(&self, i: usize) -> &[f32] {
        &self.values[i * self.segment_len..(i + 1) * self.segment_len]
    }

    pub fn part(&self, j: usize) -> &[f32] {
        assert!(j < self.n_parts(), "part {j} out of range");
        self.segment(j)
    }

    pub fn global(&self) -> &[f32] {
        self.segment(self.n_parts())
    }

    pub fn segments(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.segment_len)
    }
}

/// Row range of each stripe.
pub fn stripe_bounds(height: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = height / parts;
    (0..parts)
        .map(|j| {
            let start = j * base;
            let end = if j + 1 == parts { height } else { start + base };
            (start, end)
        })
        .collect()
}

#[inline]
fn bin_of(value: f32, bins: usize) -> usize {
    ((value * bins as f32) as usize).min(bins - 1)
}

pub fn extract(img: &Image, cfg: &DescriptorConfig) -> Result<Descriptor> {
    cfg.validate()?;
    if img.height() < cfg.parts {
        return Err(Error::Shape(format!(
            "image height {} is smaller than the {} parts",
            img.height(),
            cfg.parts
        )));
    }
    let bins = cfg.bins_per_channel;
    let seg = cfg.segment_len();
    let mut counts = vec![0u32; cfg.dimension()];
    let global_off = cfg.parts * seg;
    for (j, (start, end)) in stripe_bounds(img.height(), cfg.parts).into_iter().enumerate() {
        let off = j * seg;
        for y in start..end {
            for &p in img.row(y) {
                let hsv = rgb_to_hsv(p);
                let hb = bin_of(hsv.h / 360.0, bins);
                let sb = bins + bin_of(hsv.s, bins);
                let vb = 2 * bins + bin_of(hsv.v, bins);
                for b in [hb, sb, vb] {
                    counts[off + b] += 1;
                    counts[global_off + b] += 1;
                }
            }
        }
    }
    let mut values: Vec<f32> = Vec::with_capacity(counts.len());
    for chunk in counts.chunks_exact(seg) {
        let norm = chunk.iter().map(|&c| f64::from(c) * f64::from(c)).sum::<f64>().sqrt();
        if norm == 0.0 {
            values.extend(std::iter::repeat(0.0).take(seg));
        } else {
            values.extend(chunk.iter().map(|&c| (f64::from(c) / norm) as f32));
        }
    }
    Descriptor::from_values(values, seg)
}

/// Extracts descriptors for many images on the current rayon pool, preserving order.
pub fn extract_all<I: AsRef<Image> + Sync>(imgs: &[I], cfg: &DescriptorConfig) -> Result<Vec<Descriptor>> {
    imgs.par_iter().map(|img| extract(img.as_ref(), cfg)).collect()
}

impl AsRef<Image> for Image {
    fn as_ref(&self) -> &Image {
        self
    }
}

/// Eval-mode preprocessing followed by descriptor extraction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturePipeline {
    pub preprocess: PreprocessConfig,
    pub descriptor: DescriptorConfig,
}

impl FeaturePipeline {
    pub fn prepare(&self, img: &Image) -> Result<Image> {
        resize_bilinear(img, self.preprocess.width, self.preprocess.height)
    }

    pub fn describe(&self, img: &Image) -> Result<Descriptor> {
        extract(&self.prepare(img)?, &self.descriptor)
    }

    pub fn describe_all<I: AsRef<Image> + Sync>(&self, imgs: &[I]) -> Result<Vec<Descriptor>> {
        imgs.par_iter().map(|img| self.describe(img.as_ref())).collect()
    }
}

/// Euclidean distance between equal-length vectors, accumulated in f64.
pub fn euclidean(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cannot compare vectors of dimension {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

pub fn distance(a: &Descriptor, b: &Descriptor) -> Result<f64> {
    euclidean(a.values(), b.values())
}

/// Row-major embedding matrix with a fixed dimension, as read from or written
/// to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    dimension: usize,
    data: Vec<f32>,
}

impl Embeddings {
    pub fn new(dimension: usize, data: Vec<f32>) -> Result<Self> {
        if dimension == 0 || data.len() % dimension != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form rows of dimension {dimension}",
                data.len()
            )));
        }
        Ok(Embeddings { dimension, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dimension = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::Input("no embeddings".into()))?;
        let mut data = Vec::with_capacity(dimension * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dimension {
                return Err(Error::Shape(format!(
                    "embedding of dimension {} among rows of dimension {dimension}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Embeddings::new(dimension, data)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dimension)
    }

    /// Little-endian: u32 dimension, u32 count, then `count * dimension` f32 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.data.len());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format(format!(
                "embedding file has {} bytes, shorter than its 8-byte header",
                bytes.len()
            )));
        }
        let dimension = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let expected = dimension
            .checked_mul(count)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(8))
            .ok_or_else(|| Error::Format("embedding header overflows".into()))?;
        if dimension == 0 || bytes.len() != expected {
            return Err(Error::Format(format!(
                "header declares {count} x {dimension} values ({expected} bytes) but file has {} bytes",
                bytes.len()
            )));
        }
        let data = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Embeddings::new(dimension, data)
    }

    pub fn write_bin(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_bin(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Embeddings::from_bytes(&bytes)
    }

    /// One comma-separated row per embedding, no header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|v| v.trim().parse::<f32>())
                .collect::<std::result::Result<Vec<f32>, _>>()
                .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), n + 1)))?;
            rows.push(row);
        }
        Embeddings::from_rows(&rows).map_err(|e| match e {
            Error::Shape(msg) | Error::Input(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Reads `.csv` as CSV and anything else as the binary format.
    pub fn read(path: &Path) -> Result<Self> {
        let is_csv = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("csv"))
            .unwrap_or(false);
        if is_csv {
            Embeddings::read_csv(path)
        } else {
            Embeddings::read_bin(path)
        }
    }
}
