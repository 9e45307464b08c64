//! Domain-universality analysis: how far a model's features and predictions
//! move when an image undergoes a single-factor transformation.
//!
//! Distances are raw Euclidean. Features are the model embedding (concatenated
//! head logits) when a model is given, otherwise the descriptor itself.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::LinearModel;
use crate::error::{Error, Result};
use crate::features::{euclidean, extract, FeaturePipeline};
use crate::raster::Image;
use crate::rng::{mix, substream};
use crate::transform::{Factor, TransformParams, TransformSpace};

/// Parameters with only `factor` drawn (uniformly from its range in `space`,
/// regardless of the enable flag); everything else stays at identity.
pub fn single_factor_params(space: &TransformSpace, factor: Factor, seed: u64, index: usize) -> TransformParams {
    let mut rng = substream(mix(seed, factor as u64 + 1), index as u64);
    let mut t = TransformParams::IDENTITY;
    t.set(factor, space.range(factor).sample(&mut rng));
    t
}

/// `min(n, len)` distinct indices drawn uniformly without replacement, sorted.
pub fn sample_analysis_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), len, n).into_vec();
    idx.sort_unstable();
    idx
}

pub fn sample_analysis_set<'a>(images: &[&'a Image], n: usize, seed: u64) -> Vec<&'a Image> {
    sample_analysis_indices(images.len(), n, seed)
        .into_iter()
        .map(|i| images[i])
        .collect()
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub mean: f64,
    pub std: f64,
}

impl DistanceStats {
    fn from_samples(d: &[f64]) -> Self {
        let n = d.len() as f64;
        let mean = compensated_sum(d.iter().copied()) / n;
        let var = compensated_sum(d.iter().map(|&x| (x - mean) * (x - mean))) / n;
        DistanceStats { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Level {
    Feature,
    Prediction,
}

fn invariance_distances(
    model: Option<&LinearModel>,
    images: &[&Image],
    factor: Factor,
    space: &TransformSpace,
    seed: u64,
    features: &FeaturePipeline,
    level: Level,
) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(Error::Input("invariance analysis needs at least one image".into()));
    }
    if level == Level::Prediction && model.is_none() {
        return Err(Error::Input("prediction-level invariance needs a trained model".into()));
    }
    let represent = |img: &Image| -> Result<Vec<f32>> {
        let d = extract(img, &features.descriptor)?;
        match (level, model) {
            (Level::Feature, None) => Ok(d.into_values()),
            (Level::Feature, Some(m)) => m.embed(&d),
            (Level::Prediction, Some(m)) => Ok(m.predict(&d)?.concatenated()),
            (Level::Prediction, None) => unreachable!(),
        }
    };
    images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let original = features.prepare(img)?;
            let t = single_factor_params(space, factor, seed, i);
            let transformed = space.pipeline.apply(&original, &t);
            euclidean(&represent(&original)?, &represent(&transformed)?)
        })
        .collect()
}

/// Mean feature distance between each image and its single-factor transform.
pub fn feature_invariance(
    model: Option<&LinearModel>,
    images: &[&Image],
    factor: Factor,
    space: &TransformSpace,
    seed: u64,
    features: &FeaturePipeline,
) -> Result<DistanceStats> {
    let d = invariance_distances(model, images, factor, space, seed, features, Level::Feature)?;
    Ok(DistanceStats::from_samples(&d))
}

/// Mean distance between concatenated prediction vectors of each image and its
/// single-factor transform.
pub fn prediction_invariance(
    model: Option<&LinearModel>,
    images: &[&Image],
    factor: Factor,
    space: &TransformSpace,
    seed: u64,
    features: &FeaturePipeline,
) -> Result<DistanceStats> {
    let d = invariance_distances(model, images, factor, space, seed, features, Level::Prediction)?;
    Ok(DistanceStats::from_samples(&d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorInvariance {
    pub factor: Factor,
    pub feature: DistanceStats,
    pub prediction: Option<DistanceStats>,
    /// The factor value drawn for each analysed image, in image order.
    pub draws: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub distance: String,
    pub feature_space: String,
    pub sample_count: usize,
    pub factors: Vec<FactorInvariance>,
}

impl InvarianceReport {
    pub fn factor(&self, f: Factor) -> Option<&FactorInvariance> {
        self.factors.iter().find(|x| x.factor == f)
    }

    /// `factor,level,mean,std` rows, `level` being F (feature) or P (prediction).
    pub fn to_csv_rows(&self, model_label: &str) -> String {
        let mut out = String::new();
        for f in &self.factors {
            out.push_str(&format!("{model_label},{},F,{},{}\n", f.factor.code(), f.feature.mean, f.feature.std));
            if let Some(p) = f.prediction {
                out.push_str(&format!("{model_label},{},P,{},{}\n", f.factor.code(), p.mean, p.std));
            }
        }
        out
    }
}

pub const CSV_HEADER: &str = "model,factor,level,mean,std\n";

/// Runs the feature- and (with a model) prediction-level analysis for all four factors.
pub fn analyse(
    model: Option<&LinearModel>,
    images: &[&Image],
    space: &TransformSpace,
    seed: u64,
    features: &FeaturePipeline,
) -> Result<InvarianceReport> {
    let mut factors = Vec::with_capacity(4);
    for factor in Factor::ALL {
        let feature = feature_invariance(model, images, factor, space, seed, features)?;
        let prediction = match model {
            Some(_) => Some(prediction_invariance(model, images, factor, space, seed, features)?),
            None => None,
        };
        let draws = (0..images.len())
            .map(|i| single_factor_params(space, factor, seed, i).get(factor))
            .collect();
        factors.push(FactorInvariance {
            factor,
            feature,
            prediction,
            draws,
        });
    }
    Ok(InvarianceReport {
        distance: "raw euclidean".into(),
        feature_space: if model.is_some() { "head logits" } else { "descriptor" }.into(),
        sample_count: images.len(),
        factors,
    })
}
