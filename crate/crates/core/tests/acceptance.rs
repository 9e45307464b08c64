//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

#[path = "common/mod.rs"]
mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use forge_core::classifier::{combined_ce_from_logits, combined_ce_loss, loss_and_gradient, LinearModel, PredictionSet};
use forge_core::cli::commands::fixture_run_config;
use forge_core::cli::experiment::{ablation, sweep, universality, Experiment};
use forge_core::colorspace::{hsv_to_rgb, rgb_to_hsv};
use forge_core::eval::{evaluate, DistanceMatrix, EvalProtocol, SampleMeta};
use forge_core::features::Descriptor;
use forge_core::fixture::{generate, FixtureConfig};
use forge_core::transform::{
    adjust_contrast, adjust_saturation, apply_transform, augment_batch, interpolate, mean_luminance, shift_hue,
    Factor, LumaWeights, TransformParams, TransformSpace,
};
use forge_core::{Image, RgbPixel};

const HUE_CYCLE_TOL: f32 = 1e-6;
const HUE_GROUP_TOL: f32 = 2e-6;
const CONTRAST_MEAN_TOL: f32 = 1e-6;
const GRAY_TOL: f32 = 1e-6;
const ROUND_TRIP_TOL: f32 = 1e-6;
const ROUND_TRIP_PIXELS: usize = 1_000_000;
const METRIC_TOL: f64 = 1e-9;
const METRIC_INSTANCES: usize = 100;
const LOSS_TOL: f64 = 1e-9;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_INSTANCES: usize = 50;
const MIN_ANALYSIS_IDENTITIES: usize = 20;
const MIN_ANALYSIS_IMAGES: usize = 500;
const RANK1_MARGIN: f64 = 0.05;
const SWEEP_COUNTS: [usize; 4] = [2, 4, 8, 16];
const SWEEP_SEEDS: [u64; 3] = [0, 1, 2];
const THROUGHPUT_FLOOR: f64 = 2000.0;
const THROUGHPUT_THREADS: usize = 8;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f32, hi: f32) -> Image {
    Image::from_fn(w, h, |_, _| RgbPixel::new(rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi))).unwrap()
}

fn max_diff(a: &Image, b: &Image) -> f32 {
    a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(p, q)| (p.r - q.r).abs().max((p.g - q.g).abs()).max((p.b - q.b).abs()))
        .fold(0.0, f32::max)
}

fn transform_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    let (mut cyc, mut group, mut mean, mut gray) = (0f32, 0f32, 0f32, 0f32);
    for _ in 0..200 {
        let img = random_image(&mut rng, 17, 23, 0.0, 1.0);
        if apply_transform(&img, &TransformParams::IDENTITY) != img {
            failures.push("identity is not a fixpoint");
        }
        cyc = cyc.max(max_diff(&shift_hue(&img, 360.0), &img));
        let (a, b) = (rng.gen_range(-400.0..400.0), rng.gen_range(-400.0..400.0));
        group = group.max(max_diff(&shift_hue(&shift_hue(&img, a), b), &shift_hue(&img, a + b)));

        let other = random_image(&mut rng, 17, 23, 0.0, 1.0);
        if interpolate(&other, &img, 0.0).unwrap() != other || interpolate(&other, &img, 1.0).unwrap() != img {
            failures.push("interpolation endpoints are not exact");
        }

        let mid = random_image(&mut rng, 17, 23, 0.3, 0.7);
        let f = rng.gen_range(0.5..1.5);
        let luma = LumaWeights::default();
        mean = mean.max((mean_luminance(&adjust_contrast(&mid, f), luma) - mean_luminance(&mid, luma)).abs());

        let g = Image::from_fn(9, 7, |_, _| RgbPixel::gray(rng.gen_range(0.0..1.0))).unwrap();
        gray = gray
            .max(max_diff(&shift_hue(&g, rng.gen_range(-180.0..180.0)), &g))
            .max(max_diff(&adjust_saturation(&g, rng.gen_range(0.0..3.0)), &g));
    }
    failures.sort_unstable();
    failures.dedup();
    let pass = failures.is_empty()
        && cyc <= HUE_CYCLE_TOL
        && group <= HUE_GROUP_TOL
        && mean <= CONTRAST_MEAN_TOL
        && gray <= GRAY_TOL;
    check(
        pass,
        format!(
            "hue 360 err {cyc:.2e}, hue group err {group:.2e}, contrast mean err {mean:.2e}, gray H/S err {gray:.2e}{}",
            if failures.is_empty() { String::new() } else { format!(", {}", failures.join(", ")) }
        ),
    )
}

fn colour_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0f32;
    for _ in 0..ROUND_TRIP_PIXELS {
        let p = RgbPixel::new(rng.gen(), rng.gen(), rng.gen());
        let q = hsv_to_rgb(rgb_to_hsv(p));
        worst = worst.max((p.r - q.r).abs()).max((p.g - q.g).abs()).max((p.b - q.b).abs());
    }
    check(worst <= ROUND_TRIP_TOL, format!("{ROUND_TRIP_PIXELS} pixels, max channel error {worst:.2e}"))
}

/// Exhaustive reference: every gallery item's rank is counted directly.
fn reference_scores(dist: &[Vec<f64>], q: &[SampleMeta], g: &[SampleMeta]) -> (Vec<f64>, f64, usize) {
    let cols = g.len();
    let mut hits = vec![0usize; cols];
    let mut ap_sum = 0.0;
    let mut scored = 0;
    for (i, row) in dist.iter().enumerate() {
        let valid: Vec<usize> = (0..cols).filter(|&j| !(g[j].identity == q[i].identity && g[j].camera == q[i].camera)).collect();
        let rank = |j: usize| 1 + valid.iter().filter(|&&k| row[k] < row[j] || (row[k] == row[j] && k < j)).count();
        let positives: Vec<usize> = valid.iter().copied().filter(|&j| g[j].identity == q[i].identity).collect();
        if positives.is_empty() {
            continue;
        }
        scored += 1;
        let ranks: Vec<usize> = positives.iter().map(|&j| rank(j)).collect();
        let first = *ranks.iter().min().unwrap();
        for h in hits.iter_mut().skip(first - 1) {
            *h += 1;
        }
        let ap: f64 = ranks
            .iter()
            .map(|&r| ranks.iter().filter(|&&s| s <= r).count() as f64 / r as f64)
            .sum::<f64>()
            / ranks.len() as f64;
        ap_sum += ap;
    }
    let cmc = hits.iter().map(|&h| if scored == 0 { 0.0 } else { h as f64 / scored as f64 }).collect();
    (cmc, if scored == 0 { 0.0 } else { ap_sum / scored as f64 }, scored)
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0f64;
    let protocol = EvalProtocol::default();
    for _ in 0..METRIC_INSTANCES {
        let nq = rng.gen_range(1..=10);
        let ng = rng.gen_range(1..=30);
        let meta = |rng: &mut ChaCha8Rng| SampleMeta {
            identity: rng.gen_range(1..=5),
            camera: rng.gen_range(1..=3),
        };
        let q: Vec<SampleMeta> = (0..nq).map(|_| meta(&mut rng)).collect();
        let g: Vec<SampleMeta> = (0..ng).map(|_| meta(&mut rng)).collect();
        let coarse = rng.gen_bool(0.5);
        let dist: Vec<Vec<f64>> = (0..nq)
            .map(|_| {
                (0..ng)
                    .map(|_| {
                        let d: f64 = rng.gen_range(0.0..2.0);
                        if coarse { (d * 4.0).round() / 4.0 } else { d }
                    })
                    .collect()
            })
            .collect();
        let (cmc, map, scored) = reference_scores(&dist, &q, &g);
        let flat = dist.iter().flatten().copied().collect();
        let report = evaluate(&DistanceMatrix::from_vec(nq, ng, flat).unwrap(), &q, &g, &protocol).unwrap();
        if report.scored_queries != scored {
            return check(false, format!("scored {} queries, reference {scored}", report.scored_queries));
        }
        worst = worst.max((report.map - map).abs());
        for (r, c) in cmc.iter().enumerate() {
            worst = worst.max((report.rank(r + 1) - c).abs());
        }
    }

    // hits at ranks 1 and 3 of 5
    let q = [SampleMeta { identity: 1, camera: 1 }];
    let g: Vec<SampleMeta> = [1, 2, 1, 2, 2].iter().map(|&identity| SampleMeta { identity, camera: 2 }).collect();
    let d = DistanceMatrix::from_vec(1, 5, vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
    let hand = evaluate(&d, &q, &g, &protocol).unwrap().map;
    let expected = (1.0 + 2.0 / 3.0) / 2.0;
    let hand_ok = (hand - expected).abs() <= METRIC_TOL && (hand - 0.8333).abs() <= 1e-4;
    check(
        worst <= METRIC_TOL && hand_ok,
        format!("{METRIC_INSTANCES} instances, max deviation {worst:.2e}; hand AP {hand:.6}"),
    )
}

fn random_model(rng: &mut ChaCha8Rng, heads: usize, dim: usize, classes: usize) -> LinearModel {
    let mut model = LinearModel::zeros(heads, dim, classes);
    for h in model.heads_mut() {
        for w in h.weights.iter_mut().chain(h.bias.iter_mut()) {
            *w = rng.gen_range(-1.0..1.0);
        }
    }
    model
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn loss_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut closed = 0f64;
    for k in [2usize, 3, 10, 751] {
        let uniform = PredictionSet::new(vec![vec![1.0 / k as f64; k]; 7]).unwrap();
        for eps in [0.0, 0.1, 0.5] {
            let loss = combined_ce_loss(&uniform, 0, eps).unwrap();
            closed = closed.max((loss - 7.0 * (k as f64).ln()).abs());
        }
    }

    let mut worst_logit = 0f64;
    let mut worst_param = 0f64;
    let mut one_hot_exact = true;
    for _ in 0..GRAD_INSTANCES {
        let classes = rng.gen_range(2..8);
        let label = rng.gen_range(0..classes);
        let eps = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..0.3) };
        let logits: Vec<Vec<f64>> = (0..7).map(|_| (0..classes).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let (_, grads) = combined_ce_from_logits(&logits, label, eps).unwrap();
        let h = 1e-6;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for head in 0..7 {
            for c in 0..classes {
                let mut plus = logits.clone();
                let mut minus = logits.clone();
                plus[head][c] += h;
                minus[head][c] -= h;
                let lp = combined_ce_from_logits(&plus, label, eps).unwrap().0;
                let lm = combined_ce_from_logits(&minus, label, eps).unwrap().0;
                numeric.push((lp - lm) / (2.0 * h));
                analytic.push(grads[head][c]);
            }
        }
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        worst_logit = worst_logit.max(norm(&diff) / norm(&analytic).max(norm(&numeric)));

        // parameter gradient of a random model
        let dim = rng.gen_range(2..6);
        let model = random_model(&mut rng, 7, dim, classes);
        let d = Descriptor::from_values((0..7 * dim).map(|_| rng.gen_range(0.0..1.0)).collect(), dim).unwrap();
        let (_, grad) = loss_and_gradient(&model, &d, label, eps).unwrap();
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        let per_head = classes * (dim + 1);
        for _ in 0..10 {
            let idx = rng.gen_range(0..7 * per_head);
            let (head, within) = (idx / per_head, idx % per_head);
            let bump = |delta: f32| {
                let mut m = model.clone();
                let hd = &mut m.heads_mut()[head];
                let slot = if within < classes * dim { &mut hd.weights[within] } else { &mut hd.bias[within - classes * dim] };
                *slot += delta;
                let value = *slot;
                (m, value)
            };
            let (plus, wp) = bump(1e-3);
            let (minus, wm) = bump(-1e-3);
            let lp = loss_and_gradient(&plus, &d, label, eps).unwrap().0;
            let lm = loss_and_gradient(&minus, &d, label, eps).unwrap().0;
            numeric.push((lp - lm) / (f64::from(wp) - f64::from(wm)));
            analytic.push(grad.values()[idx]);
        }
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        worst_param = worst_param.max(norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12));

        // eps = 0 is plain one-hot cross-entropy
        let preds = model.predict(&d).unwrap();
        let ce = combined_ce_loss(&preds, label, 0.0).unwrap();
        let one_hot: f64 = preds.heads().iter().map(|p| -p[label].ln()).sum();
        one_hot_exact &= ce == one_hot;
    }
    check(
        closed <= LOSS_TOL && worst_logit <= GRAD_REL_TOL && worst_param <= GRAD_REL_TOL && one_hot_exact,
        format!(
            "7 ln K err {closed:.2e}; {GRAD_INSTANCES} instances, rel grad err logits {worst_logit:.2e}, params {worst_param:.2e}; eps=0 one-hot exact: {one_hot_exact}"
        ),
    )
}

fn run_pair(args: &[&str], root: &Path, tag: &str) -> Result<(), String> {
    let mut snaps = Vec::new();
    for (k, threads) in ["1", "1", "8"].iter().enumerate() {
        let out = root.join(format!("{tag}-{k}"));
        let mut full: Vec<&str> = args.to_vec();
        let out_s = out.to_str().unwrap().to_string();
        full.extend(["--threads", threads, "--out", &out_s]);
        let res = common::forge(&full);
        if !res.status.success() {
            return Err(format!("{tag} failed: {}", String::from_utf8_lossy(&res.stderr)));
        }
        snaps.push(common::snapshot(&out));
    }
    if snaps[0] != snaps[1] {
        return Err(format!("{tag}: repeated run differs"));
    }
    if snaps[0] != snaps[2] {
        return Err(format!("{tag}: --threads 1 and --threads 8 differ"));
    }
    Ok(())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let fx = root.join("fx");
    let cfg = common::small_fixture(&fx);
    let cfg_s = cfg.to_str().unwrap();
    let fixture_args = ["fixture", "--train-identities", "6", "--test-identities", "5", "--images-per-identity", "4"];
    let model = root.join("train-0").join("model.bin");
    let model_s = model.to_str().unwrap().to_string();
    let ev = root.join("eval-0");
    let path = |name: &str| ev.join(name).to_str().unwrap().to_string();
    let (qe, qm, ge, gm) = (path("query.emb"), path("query_meta.jsonl"), path("gallery.emb"), path("gallery_meta.jsonl"));
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("fixture", fixture_args.to_vec()),
        ("augment", vec!["augment", "--config", cfg_s, "--count", "2"]),
        ("train", vec!["train", "--config", cfg_s]),
        ("eval", vec!["eval", "--config", cfg_s, "--model", &model_s]),
        (
            "eval-external",
            vec!["eval-external", "--query-emb", &qe, "--query-meta", &qm, "--gallery-emb", &ge, "--gallery-meta", &gm],
        ),
        ("universality", vec!["universality", "--config", cfg_s, "--samples", "30"]),
        ("ablate", vec!["ablate", "--config", cfg_s]),
        ("sweep", vec!["sweep", "--config", cfg_s, "--counts", "2,4"]),
    ];
    let mut done = Vec::new();
    for (tag, args) in &runs {
        if let Err(e) = run_pair(args, root, tag) {
            return check(false, e);
        }
        done.push(*tag);
    }
    check(true, format!("byte-identical across reruns and thread counts: {}", done.join(", ")))
}

fn fixture_experiment() -> (forge_core::fixture::Fixture, forge_core::cli::RunConfig) {
    let fcfg = FixtureConfig::default();
    (generate(&fcfg).unwrap(), fixture_run_config(&fcfg))
}

fn invariance_ordering() -> Outcome {
    let (fx, run) = fixture_experiment();
    let features = run.features();
    let train_cfg = run.train_config();
    let exp = Experiment {
        train: &fx.train,
        query: &fx.query,
        gallery: &fx.gallery,
        features: &features,
        train_config: &train_cfg,
        protocol: &run.eval,
    };
    let ids = fx.query.n_identities();
    let out = universality(&exp, &run.transform, run.universality.samples, run.seed).unwrap();
    let mut lines = Vec::new();
    let mut pass = ids >= MIN_ANALYSIS_IDENTITIES && out.uit.sample_count >= MIN_ANALYSIS_IMAGES;
    for f in Factor::ALL {
        let (b, u) = (out.baseline.factor(f).unwrap(), out.uit.factor(f).unwrap());
        let (bp, up) = (b.prediction.as_ref().unwrap().mean, u.prediction.as_ref().unwrap().mean);
        pass &= u.feature.mean < b.feature.mean && up < bp;
        lines.push(format!("{}: F {:.3}<{:.3} P {:.4}<{:.4}", f.code(), u.feature.mean, b.feature.mean, up, bp));
    }
    check(pass, format!("{ids} identities, {} images; uit<baseline {}", out.uit.sample_count, lines.join("; ")))
}

fn ablation_direction() -> Outcome {
    let (fx, run) = fixture_experiment();
    let features = run.features();
    let train_cfg = run.train_config();
    let exp = Experiment {
        train: &fx.train,
        query: &fx.query,
        gallery: &fx.gallery,
        features: &features,
        train_config: &train_cfg,
        protocol: &run.eval,
    };
    let rows = ablation(&exp, &run.transform).unwrap();
    let r1 = |name: &str| rows.iter().find(|r| r.name == name).unwrap().rank1;
    let base = r1("baseline");
    let offset = FixtureConfig::default().target_offset;
    let pass = r1("+All") >= base + RANK1_MARGIN && r1("+H") > base && r1("+C") > base;
    let table: Vec<String> = rows.iter().map(|r| format!("{} {:.3}", r.name, r.rank1)).collect();
    check(
        pass,
        format!(
            "offset hue {:+} contrast {}; rank-1 {}",
            offset.hue_shift,
            offset.contrast,
            table.join(", ")
        ),
    )
}

fn sweep_direction() -> Outcome {
    let (fx, run) = fixture_experiment();
    let features = run.features();
    let mut best = vec![f64::NEG_INFINITY; SWEEP_COUNTS.len()];
    for seed in SWEEP_SEEDS {
        let train_cfg = forge_core::classifier::TrainConfig { seed, ..run.train_config() };
        let exp = Experiment {
            train: &fx.train,
            query: &fx.query,
            gallery: &fx.gallery,
            features: &features,
            train_config: &train_cfg,
            protocol: &run.eval,
        };
        let points = sweep(&exp, &SWEEP_COUNTS, &run.transform, true, seed).unwrap();
        for (b, p) in best.iter_mut().zip(&points) {
            *b = b.max(p.rank1);
        }
    }
    let pass = best.windows(2).all(|w| w[0] <= w[1]);
    let curve: Vec<String> = SWEEP_COUNTS.iter().zip(&best).map(|(c, b)| format!("{c}:{b:.3}")).collect();
    check(pass, format!("best-of-{} rank-1 {}", SWEEP_SEEDS.len(), curve.join(" ")))
}

fn throughput() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let imgs: Vec<Image> = (0..64).map(|_| random_image(&mut rng, 128, 384, 0.0, 1.0)).collect();
    let space = TransformSpace::default();
    let pool = |n: usize| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let (serial, parallel) = (pool(1), pool(THROUGHPUT_THREADS));
    let identical = serial.install(|| augment_batch(&imgs, &space, 77)) == parallel.install(|| augment_batch(&imgs, &space, 77));

    let clock = Instant::now();
    let mut processed = 0usize;
    let mut round = 0u64;
    while clock.elapsed() < Duration::from_secs(2) {
        let out = parallel.install(|| augment_batch(&imgs, &space, round));
        processed += out.len();
        round += 1;
    }
    let rate = processed as f64 / clock.elapsed().as_secs_f64();
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    check(
        rate >= THROUGHPUT_FLOOR && identical,
        format!(
            "{rate:.0} images/s at 384x128 on {THROUGHPUT_THREADS} threads ({cores} cores available); parallel == serial: {identical}"
        ),
    )
}

fn main() {
    let criteria: [(&str, Option<Duration>, fn() -> Outcome); 9] = [
        ("transform algebra", Some(Duration::from_secs(10)), transform_algebra),
        ("colour round trip", Some(Duration::from_secs(5)), colour_round_trip),
        ("metric oracle", Some(Duration::from_secs(10)), metric_oracle),
        ("loss and gradients", None, loss_suite),
        ("determinism", None, determinism),
        ("invariance ordering", Some(Duration::from_secs(300)), invariance_ordering),
        ("ablation direction", Some(Duration::from_secs(600)), ablation_direction),
        ("identity-count sweep", None, sweep_direction),
        ("throughput", None, throughput),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &n.to_string() || name.contains(f.as_str())) {
            continue;
        }
        let clock = Instant::now();
        let mut outcome = run();
        let elapsed = clock.elapsed();
        if let Some(limit) = budget {
            if elapsed > *limit {
                outcome.pass = false;
                outcome.detail += &format!("; over the {}s budget", limit.as_secs());
            }
        }
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "criterion {n} [{}] {name}: {} ({:.1}s)",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
