//! Part + global softmax classifier over descriptor segments.
//!
//! Each descriptor segment (the `m` stripes and the global histogram) feeds its
//! own linear softmax head. The training objective sums a label-smoothed cross
//! entropy over all `m + 1` heads; optimisation is mini-batch SGD with momentum,
//! weight decay and a step learning-rate schedule.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{preprocess, LabeledDataset};
use crate::error::{Error, Result};
use crate::features::{extract, Descriptor, FeaturePipeline};
use crate::rng::{mix, substream};
use crate::transform::{augment_batch_in_place, TransformSpace};

/// Class posteriors of every head: `m` regional heads followed by the global head.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    heads: Vec<Vec<f64>>,
}

impl PredictionSet {
    /// Validates that every head is a probability vector over the same classes.
    pub fn new(heads: Vec<Vec<f64>>) -> Result<Self> {
        if heads.len() < 2 {
            return Err(Error::Shape(format!(
                "need at least one regional and one global head, got {}",
                heads.len()
            )));
        }
        let n = heads[0].len();
        for (i, h) in heads.iter().enumerate() {
            if h.len() != n || n == 0 {
                return Err(Error::Shape(format!(
                    "head {i} has {} classes, expected {n}",
                    h.len()
                )));
            }
            if h.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Numeric(format!("head {i} has a probability outside [0, 1]")));
            }
            let sum: f64 = h.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Numeric(format!("head {i} sums to {sum}")));
            }
        }
        Ok(PredictionSet { heads })
    }

    pub fn n_classes(&self) -> usize {
        self.heads[0].len()
    }

    pub fn heads(&self) -> &[Vec<f64>] {
        &self.heads
    }

    pub fn regional(&self) -> &[Vec<f64>] {
        &self.heads[..self.heads.len() - 1]
    }

    pub fn global(&self) -> &[f64] {
        &self.heads[self.heads.len() - 1]
    }

    /// All heads concatenated, regional first.
    pub fn concatenated(&self) -> Vec<f32> {
        self.heads.iter().flatten().map(|&p| p as f32).collect()
    }
}

/// `q_y = 1 - eps`, `q_k = eps / (n - 1)` elsewhere.
pub fn smoothed_target(n_classes: usize, label: usize, eps: f64) -> Vec<f64> {
    let off = if n_classes > 1 {
        eps / (n_classes - 1) as f64
    } else {
        0.0
    };
    (0..n_classes)
        .map(|k| if k == label { 1.0 - eps } else { off })
        .collect()
}

/// Smoothed cross entropy of a single head. Terms with zero target mass are
/// skipped, so `0 * log 0` contributes nothing.
pub fn head_ce_loss(probs: &[f64], label: usize, eps: f64) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Input(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let q = smoothed_target(probs.len(), label, eps);
    let mut loss = 0.0;
    for (k, (&qk, &pk)) in q.iter().zip(probs).enumerate() {
        if qk == 0.0 {
            continue;
        }
        if pk <= 0.0 || pk.is_nan() {
            return Err(Error::Numeric(format!(
                "probability {pk} for class {k} carries target mass {qk}"
            )));
        }
        loss -= qk * pk.ln();
    }
    Ok(loss)
}

/// Sum of the smoothed cross entropies of all regional heads and the global head.
pub fn combined_ce_loss(preds: &PredictionSet, label: usize, eps: f64) -> Result<f64> {
    validate_smoothing(eps)?;
    preds
        .heads()
        .iter()
        .map(|h| head_ce_loss(h, label, eps))
        .sum()
}

fn validate_smoothing(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Input(format!("label smoothing {eps} must lie in [0, 1)")));
    }
    Ok(())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Combined loss and its gradient with respect to every head's logits
/// (`softmax(z) - q` per head), computed via log-softmax.
pub fn combined_ce_from_logits(
    logits: &[Vec<f64>],
    label: usize,
    eps: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    validate_smoothing(eps)?;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for z in logits {
        if label >= z.len() {
            return Err(Error::Input(format!(
                "label {label} out of range for {} classes",
                z.len()
            )));
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let q = smoothed_target(z.len(), label, eps);
        let mut g = Vec::with_capacity(z.len());
        for (k, &zk) in z.iter().enumerate() {
            let log_p = zk - lse;
            if q[k] != 0.0 {
                loss -= q[k] * log_p;
            }
            g.push(log_p.exp() - q[k]);
        }
        grads.push(g);
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f32,
    /// Epoch after which the learning rate is divided by `lr_decay_factor`.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f32,
    pub smoothing: f64,
    /// Random crop and horizontal flip on training images.
    pub geometric_augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 32,
            epochs: 60,
            lr: 0.001,
            lr_decay_epoch: 40,
            lr_decay_factor: 10.0,
            smoothing: 0.1,
            geometric_augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        validate_smoothing(self.smoothing)?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Input(format!("learning rate {} must be positive", self.lr)));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Input("epochs and batch size must be at least 1".into()));
        }
        if !(self.lr_decay_factor > 0.0) {
            return Err(Error::Input("lr decay factor must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f32 {
        if epoch < self.lr_decay_epoch {
            self.lr
        } else {
            self.lr / self.lr_decay_factor
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    /// Row-major `n_classes x input_dim`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// `m + 1` linear softmax heads, head `i` reading descriptor segment `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    n_classes: usize,
    input_dim: usize,
    heads: Vec<Head>,
}

impl LinearModel {
    pub fn zeros(n_heads: usize, input_dim: usize, n_classes: usize) -> Self {
        let head = Head {
            weights: vec![0.0; n_classes * input_dim],
            bias: vec![0.0; n_classes],
        };
        LinearModel {
            n_classes,
            input_dim,
            heads: vec![head; n_heads],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [Head] {
        &mut self.heads
    }

    fn check(&self, d: &Descriptor) -> Result<()> {
        if d.segment_len() != self.input_dim || d.n_parts() + 1 != self.heads.len() {
            return Err(Error::Shape(format!(
                "model expects {} segments of {}, descriptor has {} of {}",
                self.heads.len(),
                self.input_dim,
                d.n_parts() + 1,
                d.segment_len()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, d: &Descriptor) -> Result<Vec<Vec<f64>>> {
        self.check(d)?;
        Ok(self
            .heads
            .iter()
            .zip(d.segments())
            .map(|(head, x)| {
                head.weights
                    .chunks_exact(self.input_dim)
                    .zip(&head.bias)
                    .map(|(row, &b)| {
                        f64::from(b)
                            + row
                                .iter()
                                .zip(x)
                                .map(|(&w, &v)| f64::from(w) * f64::from(v))
                                .sum::<f64>()
                    })
                    .collect()
            })
            .collect())
    }

    pub fn predict(&self, d: &Descriptor) -> Result<PredictionSet> {
        let heads = self.logits(d)?.iter().map(|z| softmax(z)).collect();
        PredictionSet::new(heads)
    }

    /// The model's representation of a descriptor: all head logits concatenated.
    pub fn embed(&self, d: &Descriptor) -> Result<Vec<f32>> {
        Ok(self.logits(d)?.into_iter().flatten().map(|z| z as f32).collect())
    }

    pub fn weight_norm(&self) -> f64 {
        self.heads
            .iter()
            .flat_map(|h| h.weights.iter().chain(&h.bias))
            .map(|&w| f64::from(w) * f64::from(w))
            .sum::<f64>()
            .sqrt()
    }

    fn param_count(&self) -> usize {
        self.heads.len() * self.n_classes * (self.input_dim + 1)
    }

    fn params(&self) -> impl Iterator<Item = &f32> {
        self.heads.iter().flat_map(|h| h.weights.iter().chain(&h.bias))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f32> {
        self.heads
            .iter_mut()
            .flat_map(|h| h.weights.iter_mut().chain(h.bias.iter_mut()))
    }

    /// Little-endian f32 parameters: per head, weights row-major then bias.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.params().flat_map(|w| w.to_le_bytes()).collect()
    }

    pub fn from_bytes(bytes: &[u8], n_heads: usize, input_dim: usize, n_classes: usize) -> Result<Self> {
        let mut model = LinearModel::zeros(n_heads, input_dim, n_classes);
        if bytes.len() != 4 * model.param_count() {
            return Err(Error::Format(format!(
                "checkpoint has {} bytes, expected {}",
                bytes.len(),
                4 * model.param_count()
            )));
        }
        for (w, c) in model.params_mut().zip(bytes.chunks_exact(4)) {
            *w = f32::from_le_bytes(c.try_into().unwrap());
        }
        Ok(model)
    }
}

/// Parameter gradient laid out like [`LinearModel::params`].
#[derive(Debug, Clone)]
pub struct Gradient {
    values: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(model: &LinearModel) -> Self {
        Gradient {
            values: vec![0.0; model.param_count()],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Adds `scale * dL/dparams` for one sample given the logit gradients.
    fn accumulate(&mut self, model: &LinearModel, d: &Descriptor, logit_grads: &[Vec<f64>], scale: f64) {
        let per_head = model.n_classes * (model.input_dim + 1);
        for (h, (x, g)) in d.segments().zip(logit_grads).enumerate() {
            let base = h * per_head;
            let (w, b) = self.values[base..base + per_head].split_at_mut(model.n_classes * model.input_dim);
            for (k, &gk) in g.iter().enumerate() {
                let gk = gk * scale;
                for (wi, &xi) in w[k * model.input_dim..(k + 1) * model.input_dim].iter_mut().zip(x) {
                    *wi += gk * f64::from(xi);
                }
                b[k] += gk;
            }
        }
    }
}

/// Combined loss for one sample and its gradient with respect to the model parameters.
pub fn loss_and_gradient(model: &LinearModel, d: &Descriptor, label: usize, eps: f64) -> Result<(f64, Gradient)> {
    let (loss, logit_grads) = combined_ce_from_logits(&model.logits(d)?, label, eps)?;
    let mut grad = Gradient::zeros_like(model);
    grad.accumulate(model, d, &logit_grads, 1.0);
    Ok((loss, grad))
}

/// SGD with momentum and L2 weight decay:
/// `v = momentum * v + (g + decay * w)`, `w -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f32,
    weight_decay: f32,
    velocity: Vec<f32>,
}

impl Sgd {
    pub fn new(model: &LinearModel, momentum: f32, weight_decay: f32) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: vec![0.0; model.param_count()],
        }
    }

    pub fn step(&mut self, model: &mut LinearModel, grad: &Gradient, lr: f32) {
        for ((w, v), &g) in model.params_mut().zip(&mut self.velocity).zip(&grad.values) {
            let d = g as f32 + self.weight_decay * *w;
            *v = self.momentum * *v + d;
            *w -= lr * *v;
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LinearModel,
    /// Mean combined loss per epoch, measured on the inputs seen during that epoch.
    pub loss_curve: Vec<f64>,
}

/// Generic mini-batch loop. `batch` returns the descriptors of the given sample
/// indices for an epoch/batch pair; it is where augmentation happens.
pub fn train_loop(
    labels: &[usize],
    n_classes: usize,
    n_heads: usize,
    input_dim: usize,
    cfg: &TrainConfig,
    mut batch: impl FnMut(usize, usize, &[usize]) -> Result<Vec<Descriptor>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if n_classes < 2 {
        return Err(Error::Training(format!(
            "need at least two identities to train, got {n_classes}"
        )));
    }
    if labels.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let mut model = LinearModel::zeros(n_heads, input_dim, n_classes);
    let mut sgd = Sgd::new(&model, cfg.momentum, cfg.weight_decay);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..labels.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut substream(mix(cfg.seed, SHUFFLE_TAG), epoch as u64));
        let lr = cfg.lr_at(epoch);
        let mut epoch_loss = 0.0;
        for (b, idxs) in order.chunks(cfg.batch_size).enumerate() {
            let descs = batch(epoch, b, idxs)?;
            let mut grad = Gradient::zeros_like(&model);
            let scale = 1.0 / idxs.len() as f64;
            for (d, &i) in descs.iter().zip(idxs) {
                let (loss, logit_grads) = combined_ce_from_logits(&model.logits(d)?, labels[i], cfg.smoothing)?;
                epoch_loss += loss;
                grad.accumulate(&model, d, &logit_grads, scale);
            }
            sgd.step(&mut model, &grad, lr);
        }
        loss_curve.push(epoch_loss / labels.len() as f64);
    }
    Ok(TrainOutcome { model, loss_curve })
}

const SHUFFLE_TAG: u64 = 0x5348_5546;
const PREP_TAG: u64 = 0x5052_4550;
const UIT_TAG: u64 = 0x5549_5400;

/// Trains directly on fixed descriptors (no image-level augmentation).
pub fn train_on_descriptors(
    descriptors: &[Descriptor],
    labels: &[usize],
    n_classes: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let first = descriptors
        .first()
        .ok_or_else(|| Error::Training("empty training set".into()))?;
    if descriptors.len() != labels.len() {
        return Err(Error::Shape("descriptor and label counts differ".into()));
    }
    train_loop(labels, n_classes, first.n_parts() + 1, first.segment_len(), cfg, |_, _, idxs| {
        Ok(idxs.iter().map(|&i| descriptors[i].clone()).collect())
    })
}

/// Trains the heads on images. With `use_uit`, every batch is passed through
/// [`augment_batch_in_place`] (fresh parameters every epoch) before descriptor
/// extraction.
pub fn train(
    train_set: &LabeledDataset,
    space: &TransformSpace,
    cfg: &TrainConfig,
    use_uit: bool,
    features: &FeaturePipeline,
) -> Result<TrainOutcome> {
    features.descriptor.validate()?;
    space.validate()?;
    let labels = train_set.classes().to_vec();
    let samples = train_set.samples();
    let n_heads = features.descriptor.segments();
    let input_dim = features.descriptor.segment_len();

    if !use_uit && !cfg.geometric_augment {
        let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
        let descriptors = features.describe_all(&images)?;
        return train_loop(&labels, train_set.n_identities(), n_heads, input_dim, cfg, |_, _, idxs| {
            Ok(idxs.iter().map(|&i| descriptors[i].clone()).collect())
        });
    }

    train_loop(&labels, train_set.n_identities(), n_heads, input_dim, cfg, |epoch, b, idxs| {
        let prep_seed = mix(mix(cfg.seed, PREP_TAG), epoch as u64);
        let mut imgs = idxs
            .par_iter()
            .map(|&i| {
                let mut rng = substream(prep_seed, i as u64);
                preprocess(&samples[i].image, &features.preprocess, cfg.geometric_augment, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        if use_uit {
            let uit_seed = mix(mix(mix(cfg.seed, UIT_TAG), epoch as u64), b as u64);
            augment_batch_in_place(&mut imgs, space, uit_seed);
        }
        imgs.par_iter().map(|img| extract(img, &features.descriptor)).collect()
    })
}

/// JSON sidecar stored next to a binary checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub n_heads: usize,
    pub input_dim: usize,
    pub n_classes: usize,
    /// Original identity label of each class index.
    pub identities: Vec<u32>,
    pub use_uit: bool,
    pub train: TrainConfig,
    pub features: FeaturePipeline,
    pub seed: u64,
}

pub fn save_checkpoint(model: &LinearModel, meta: &CheckpointMeta, bin_path: &Path, json_path: &Path) -> Result<()> {
    fs::write(bin_path, model.to_bytes()).map_err(|e| Error::io(bin_path, e))?;
    let json = serde_json::to_string_pretty(meta).expect("serialisable");
    fs::write(json_path, json + "\n").map_err(|e| Error::io(json_path, e))
}

pub fn load_checkpoint(bin_path: &Path, json_path: &Path) -> Result<(LinearModel, CheckpointMeta)> {
    let text = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", json_path.display())))?;
    let bytes = fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
    let model = LinearModel::from_bytes(&bytes, meta.n_heads, meta.input_dim, meta.n_classes)?;
    Ok((model, meta))
}
