use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::experiment::{
    ablation, ablation_csv, embed_all, evaluate_embeddings, metas, sweep, sweep_csv, universality, Experiment,
};
use crate::classifier::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::dataset::{ingest_directory, DatasetSummary, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::eval::{cmc_csv, EvalReport, SampleMeta};
use crate::features::Embeddings;
use crate::fixture;
use crate::raster::Image;
use crate::rng::mix;
use crate::transform::{batch_params, TransformParams, TransformSpace};

const AUGMENT_TAG: u64 = 0x4155_474d;

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report is serialisable");
    write_file(path, text + "\n")
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Input(format!("`{key}` is not configured")))
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<LabeledDataset> {
    let (path, key) = match split {
        Split::Train => (&cfg.data.train, "data.train"),
        Split::Query => (&cfg.data.query, "data.query"),
        Split::Gallery => (&cfg.data.gallery, "data.gallery"),
    };
    let dir = required(path, key)?;
    let ds = ingest_directory(dir, &cfg.data.naming(dir), split)?;
    log::info!("{split}: {} images, {} identities from {}", ds.len(), ds.n_identities(), dir.display());
    Ok(ds)
}

struct Splits {
    train: LabeledDataset,
    query: LabeledDataset,
    gallery: LabeledDataset,
}

fn load_all(cfg: &RunConfig) -> Result<Splits> {
    Ok(Splits {
        train: load_split(cfg, Split::Train)?,
        query: load_split(cfg, Split::Query)?,
        gallery: load_split(cfg, Split::Gallery)?,
    })
}

#[derive(Serialize, Deserialize)]
struct AugmentLine {
    source: String,
    output: String,
    index: usize,
    params: TransformParams,
}

fn file_stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string()
}

pub fn augment(cfg: &RunConfig) -> Result<()> {
    let ds = load_split(cfg, Split::Train)?;
    let count = cfg.augment.count_per_image;
    let dir = cfg.out.join("images");
    create_dir(&dir)?;
    let seed = mix(cfg.seed, AUGMENT_TAG);
    let mut log = String::new();
    for (i, sample) in ds.samples().iter().enumerate() {
        for k in 0..count {
            let t = batch_params(&cfg.transform, seed, i * count + k);
            let img = cfg.transform.pipeline.apply(&sample.image, &t);
            let name = format!("{}_{k:02}.png", file_stem(&sample.source_path));
            img.save_png(&dir.join(&name))?;
            let line = AugmentLine {
                source: sample.source_path.clone(),
                output: format!("images/{name}"),
                index: k,
                params: t,
            };
            log += &serde_json::to_string(&line).expect("serialisable");
            log.push('\n');
        }
    }
    write_file(&cfg.out.join("params.jsonl"), log)?;
    log::info!("wrote {} augmented images", ds.len() * count);
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    use_uit: bool,
    dataset: DatasetSummary,
    final_loss: f64,
    weight_norm: f64,
    seed: u64,
    transform: &'a TransformSpace,
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let ds = load_split(cfg, Split::Train)?;
    let features = cfg.features();
    let train_cfg = cfg.train_config();
    let outcome = crate::classifier::train(&ds, &cfg.transform, &train_cfg, cfg.uit, &features)?;
    let meta = CheckpointMeta {
        n_heads: outcome.model.n_heads(),
        input_dim: outcome.model.input_dim(),
        n_classes: outcome.model.n_classes(),
        identities: ds.identities().to_vec(),
        use_uit: cfg.uit,
        train: train_cfg,
        features,
        seed: cfg.seed,
    };
    save_checkpoint(&outcome.model, &meta, &cfg.out.join("model.bin"), &cfg.out.join("model.json"))?;
    let mut loss = String::from("epoch,loss\n");
    for (e, l) in outcome.loss_curve.iter().enumerate() {
        loss += &format!("{e},{l}\n");
    }
    write_file(&cfg.out.join("loss.csv"), loss)?;
    write_json(
        &cfg.out.join("train.json"),
        &TrainReport {
            use_uit: cfg.uit,
            dataset: ds.summary(),
            final_loss: outcome.loss_curve.last().copied().unwrap_or(f64::NAN),
            weight_norm: outcome.model.weight_norm(),
            seed: cfg.seed,
            transform: &cfg.transform,
        },
    )
}

fn write_meta(path: &Path, meta: &[SampleMeta]) -> Result<()> {
    let mut text = String::new();
    for m in meta {
        text += &serde_json::to_string(m).expect("serialisable");
        text.push('\n');
    }
    write_file(path, text)
}

fn read_meta(path: &Path) -> Result<Vec<SampleMeta>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), n + 1)))
        })
        .collect()
}

fn write_report(cfg: &RunConfig, report: &EvalReport) -> Result<()> {
    write_json(&cfg.out.join("report.json"), report)?;
    write_file(&cfg.out.join("cmc.csv"), cmc_csv(report))?;
    log::info!("rank-1 {:.4}, mAP {:.4} over {} queries", report.rank1(), report.map, report.scored_queries);
    Ok(())
}

/// Scores query against gallery with the configured model (or raw
/// descriptors) and exports the embeddings for `eval-external`.
pub fn eval(cfg: &RunConfig) -> Result<()> {
    let query = load_split(cfg, Split::Query)?;
    let gallery = load_split(cfg, Split::Gallery)?;
    let (model, features) = match &cfg.model {
        Some(bin) => {
            let (model, meta) = load_checkpoint(bin, &bin.with_extension("json"))?;
            (Some(model), meta.features)
        }
        None => (None, cfg.features()),
    };
    let q = embed_all(model.as_ref(), &query.images(), &features)?;
    let g = embed_all(model.as_ref(), &gallery.images(), &features)?;
    let (qm, gm) = (metas(&query), metas(&gallery));
    Embeddings::from_rows(&q)?.write_bin(&cfg.out.join("query.emb"))?;
    Embeddings::from_rows(&g)?.write_bin(&cfg.out.join("gallery.emb"))?;
    write_meta(&cfg.out.join("query_meta.jsonl"), &qm)?;
    write_meta(&cfg.out.join("gallery_meta.jsonl"), &gm)?;
    let report = evaluate_embeddings(&q, &qm, &g, &gm, &cfg.eval)?;
    write_report(cfg, &report)
}

fn read_side(emb: &Option<PathBuf>, meta: &Option<PathBuf>, side: &str) -> Result<(Vec<Vec<f32>>, Vec<SampleMeta>)> {
    let emb = Embeddings::read(required(emb, &format!("external.{side}_embeddings"))?)?;
    let meta = read_meta(required(meta, &format!("external.{side}_meta"))?)?;
    if emb.len() != meta.len() {
        return Err(Error::Format(format!(
            "{side}: {} embeddings but {} meta lines",
            emb.len(),
            meta.len()
        )));
    }
    Ok((emb.rows().map(|r| r.to_vec()).collect(), meta))
}

pub fn eval_external(cfg: &RunConfig) -> Result<()> {
    let ext = &cfg.external;
    let (q, qm) = read_side(&ext.query_embeddings, &ext.query_meta, "query")?;
    let (g, gm) = read_side(&ext.gallery_embeddings, &ext.gallery_meta, "gallery")?;
    if let (Some(a), Some(b)) = (q.first(), g.first()) {
        if a.len() != b.len() {
            return Err(Error::Format(format!(
                "query embeddings have dimension {} but gallery embeddings {}",
                a.len(),
                b.len()
            )));
        }
    }
    let report = evaluate_embeddings(&q, &qm, &g, &gm, &cfg.eval)?;
    write_report(cfg, &report)
}

fn with_experiment<T>(cfg: &RunConfig, f: impl FnOnce(&Experiment) -> Result<T>) -> Result<T> {
    let splits = load_all(cfg)?;
    let features = cfg.features();
    let train_cfg = cfg.train_config();
    f(&Experiment {
        train: &splits.train,
        query: &splits.query,
        gallery: &splits.gallery,
        features: &features,
        train_config: &train_cfg,
        protocol: &cfg.eval,
    })
}

pub fn universality_cmd(cfg: &RunConfig) -> Result<()> {
    let outcome = with_experiment(cfg, |exp| universality(exp, &cfg.transform, cfg.universality.samples, cfg.seed))?;
    write_json(&cfg.out.join("universality.json"), &outcome)?;
    write_file(&cfg.out.join("universality.csv"), outcome.csv())
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    let rows = with_experiment(cfg, |exp| ablation(exp, &cfg.transform))?;
    write_json(&cfg.out.join("ablation.json"), &rows)?;
    write_file(&cfg.out.join("ablation.csv"), ablation_csv(&rows))
}

pub fn sweep_cmd(cfg: &RunConfig) -> Result<()> {
    let points = with_experiment(cfg, |exp| sweep(exp, &cfg.sweep.counts, &cfg.transform, cfg.uit, cfg.seed))?;
    write_json(&cfg.out.join("sweep.json"), &points)?;
    write_file(&cfg.out.join("sweep.csv"), sweep_csv(&points))
}

#[derive(Serialize)]
struct FixtureReport {
    config: fixture::FixtureConfig,
    train: DatasetSummary,
    query: DatasetSummary,
    gallery: DatasetSummary,
}

/// Run settings suited to the small fixture images, written next to them.
pub fn fixture_run_config(fixture_cfg: &fixture::FixtureConfig) -> RunConfig {
    let mut run = RunConfig {
        seed: fixture_cfg.seed,
        ..RunConfig::default()
    };
    run.data.train = Some(PathBuf::from("train"));
    run.data.query = Some(PathBuf::from("query"));
    run.data.gallery = Some(PathBuf::from("gallery"));
    run.preprocess.width = 32;
    run.preprocess.height = 96;
    run.preprocess.crop_pad = 3;
    run.train.lr = 0.5;
    run.fixture = *fixture_cfg;
    run
}

pub fn fixture_cmd(cfg: &RunConfig) -> Result<()> {
    let fx = fixture::generate(&cfg.fixture)?;
    fixture::write(&fx, &cfg.out)?;
    let run = fixture_run_config(&cfg.fixture);
    write_file(&cfg.out.join("forge.toml"), run.to_toml())?;
    write_json(
        &cfg.out.join("fixture.json"),
        &FixtureReport {
            config: cfg.fixture,
            train: fx.train.summary(),
            query: fx.query.summary(),
            gallery: fx.gallery.summary(),
        },
    )
}

/// Loads every PNG written by `augment`, keyed by its `params.jsonl` line.
pub fn read_augment_log(out: &Path) -> Result<Vec<(String, TransformParams, Image)>> {
    let path = out.join("params.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .map(|l| {
            let line: AugmentLine = serde_json::from_str(l).map_err(|e| Error::Format(format!("params.jsonl: {e}")))?;
            let img = Image::load(&out.join(&line.output))?;
            Ok((line.source, line.params, img))
        })
        .collect()
}
