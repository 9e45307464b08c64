//! In-memory experiment drivers. The subcommands wrap these with file I/O;
//! tests call them directly.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::classifier::{train, LinearModel, TrainConfig, TrainOutcome};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::{distance_matrix, evaluate, EvalProtocol, EvalReport, SampleMeta};
use crate::features::FeaturePipeline;
use crate::raster::Image;
use crate::rng::{mix, substream};
use crate::transform::{Factor, TransformSpace};
use crate::universality::{analyse, sample_analysis_set, InvarianceReport};

const SWEEP_TAG: u64 = 0x5357_4550;
const ANALYSIS_TAG: u64 = 0x414e_414c;

pub fn metas(ds: &LabeledDataset) -> Vec<SampleMeta> {
    ds.samples()
        .iter()
        .map(|s| SampleMeta {
            identity: s.identity,
            camera: s.camera,
        })
        .collect()
}

/// Retrieval vectors: the model embedding when a model is given, the raw
/// descriptor otherwise.
pub fn embed_all(model: Option<&LinearModel>, images: &[&Image], features: &FeaturePipeline) -> Result<Vec<Vec<f32>>> {
    images
        .par_iter()
        .map(|img| {
            let d = features.describe(img)?;
            match model {
                Some(m) => m.embed(&d),
                None => Ok(d.into_values()),
            }
        })
        .collect()
}

pub fn evaluate_embeddings(
    query: &[Vec<f32>],
    query_meta: &[SampleMeta],
    gallery: &[Vec<f32>],
    gallery_meta: &[SampleMeta],
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    let dist = distance_matrix(query, gallery)?;
    evaluate(&dist, query_meta, gallery_meta, protocol)
}

pub fn evaluate_model(
    model: Option<&LinearModel>,
    query: &LabeledDataset,
    gallery: &LabeledDataset,
    features: &FeaturePipeline,
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    let q = embed_all(model, &query.images(), features)?;
    let g = embed_all(model, &gallery.images(), features)?;
    evaluate_embeddings(&q, &metas(query), &g, &metas(gallery), protocol)
}

/// Train/query/gallery triple plus the settings shared by every experiment.
#[derive(Debug, Clone, Copy)]
pub struct Experiment<'a> {
    pub train: &'a LabeledDataset,
    pub query: &'a LabeledDataset,
    pub gallery: &'a LabeledDataset,
    pub features: &'a FeaturePipeline,
    pub train_config: &'a TrainConfig,
    pub protocol: &'a EvalProtocol,
}

impl Experiment<'_> {
    pub fn fit(&self, space: &TransformSpace, use_uit: bool) -> Result<TrainOutcome> {
        train(self.train, space, self.train_config, use_uit, self.features)
    }

    pub fn score(&self, model: &LinearModel) -> Result<EvalReport> {
        evaluate_model(Some(model), self.query, self.gallery, self.features, self.protocol)
    }

    pub fn fit_and_score(&self, space: &TransformSpace, use_uit: bool) -> Result<(TrainOutcome, EvalReport)> {
        let outcome = self.fit(space, use_uit)?;
        let report = self.score(&outcome.model)?;
        Ok((outcome, report))
    }
}

/// `space` with only `factors` enabled; ranges are kept.
pub fn restrict(space: &TransformSpace, factors: &[Factor]) -> TransformSpace {
    let mut out = *space;
    for f in Factor::ALL {
        out.range_mut(f).enabled = factors.contains(&f);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub factors: Vec<Factor>,
    pub rank1: f64,
    pub map: f64,
    pub report: EvalReport,
}

/// Baseline, +H, +S, +L, +C and +All, in that order.
pub fn ablation(exp: &Experiment, space: &TransformSpace) -> Result<Vec<AblationRow>> {
    let mut settings: Vec<(String, Vec<Factor>)> = vec![("baseline".into(), vec![])];
    settings.extend(Factor::ALL.iter().map(|&f| (format!("+{}", f.code()), vec![f])));
    settings.push(("+All".into(), Factor::ALL.to_vec()));
    settings
        .into_iter()
        .map(|(name, factors)| {
            let use_uit = !factors.is_empty();
            let (_, report) = exp.fit_and_score(&restrict(space, &factors), use_uit)?;
            log::info!("{name}: rank-1 {:.4}, mAP {:.4}", report.rank1(), report.map);
            Ok(AblationRow {
                name,
                factors,
                rank1: report.rank1(),
                map: report.map,
                report,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("setting,rank1,rank5,rank10,map\n");
    for r in rows {
        out += &format!(
            "{},{},{},{},{}\n",
            r.name,
            r.report.rank(1),
            r.report.rank(5),
            r.report.rank(10),
            r.map
        );
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub count: usize,
    pub identities: Vec<u32>,
    pub rank1: f64,
    pub map: f64,
}

/// Seeded choice of `count` training identities. Depends only on the seed and
/// the count, so repeated counts pick the same subset.
pub fn pick_identities(train: &LabeledDataset, count: usize, seed: u64) -> Result<Vec<u32>> {
    let n = train.n_identities();
    if count > n {
        return Err(Error::Input(format!(
            "sweep asks for {count} identities but the train set has {n}"
        )));
    }
    let mut ids = train.identities().to_vec();
    ids.shuffle(&mut substream(mix(seed, SWEEP_TAG), count as u64));
    ids.truncate(count);
    ids.sort_unstable();
    Ok(ids)
}

pub fn sweep(exp: &Experiment, counts: &[usize], space: &TransformSpace, use_uit: bool, seed: u64) -> Result<Vec<SweepPoint>> {
    for &c in counts {
        pick_identities(exp.train, c, seed)?;
    }
    counts
        .iter()
        .map(|&count| {
            let identities = pick_identities(exp.train, count, seed)?;
            let subset = exp.train.with_identities(&identities);
            let (_, report) = Experiment { train: &subset, ..*exp }.fit_and_score(space, use_uit)?;
            log::info!("{count} identities: rank-1 {:.4}, mAP {:.4}", report.rank1(), report.map);
            Ok(SweepPoint {
                count,
                identities,
                rank1: report.rank1(),
                map: report.map,
            })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("count,rank1,map\n");
    for p in points {
        out += &format!("{},{},{}\n", p.count, p.rank1, p.map);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct UniversalityOutcome {
    pub baseline: InvarianceReport,
    pub uit: InvarianceReport,
}

impl UniversalityOutcome {
    pub fn csv(&self) -> String {
        let mut out = String::from(crate::universality::CSV_HEADER);
        out += &self.baseline.to_csv_rows("baseline");
        out += &self.uit.to_csv_rows("uit");
        out
    }
}

/// Trains a baseline and a UIT model and measures both on up to `samples`
/// held-out images (query followed by gallery).
pub fn universality(exp: &Experiment, space: &TransformSpace, samples: usize, seed: u64) -> Result<UniversalityOutcome> {
    let pool: Vec<&Image> = exp.query.images().into_iter().chain(exp.gallery.images()).collect();
    if pool.is_empty() {
        return Err(Error::Input("universality analysis needs images".into()));
    }
    let images = sample_analysis_set(&pool, samples, mix(seed, ANALYSIS_TAG));
    let baseline = exp.fit(&TransformSpace::none(), false)?.model;
    let uit = exp.fit(space, true)?.model;
    Ok(UniversalityOutcome {
        baseline: analyse(Some(&baseline), &images, space, seed, exp.features)?,
        uit: analyse(Some(&uit), &images, space, seed, exp.features)?,
    })
}
