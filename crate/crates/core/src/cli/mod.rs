//! Subcommand implementations behind the `forge` binary.
//!
//! Every subcommand resolves a [`RunConfig`] (file, then command-line
//! overrides), writes it to `<out>/config.toml`, runs on a rayon pool of
//! `--threads` workers and appends wall-clock timings to `<out>/run.log`.
//! Reports never contain timings, so repeated runs produce identical bytes.

pub mod commands;
pub mod config;
pub mod experiment;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

use crate::error::{exit_codes, Error, Result};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  invalid input (bad arguments, configuration, dataset layout, shapes)
  3  format error (malformed config, embedding or meta file)
  4  numeric error (NaN or out-of-domain values)
  5  i/o error (unreadable input, unwritable output)

Set FORGE_LOG (error, warn, info, debug, trace) to control log verbosity.";

#[derive(Debug, Parser)]
#[command(name = "forge", version, about = "Universal appearance transformations and re-id experiments", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub query: Option<PathBuf>,
    #[arg(long)]
    pub gallery: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export randomly transformed copies of the train images plus a params log.
    Augment {
        #[command(flatten)]
        data: DataArgs,
        /// Transformed copies per input image.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the part+global classifier and write a checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Train without random transformations.
        #[arg(long)]
        no_uit: bool,
    },
    /// Rank gallery against query and score CMC / mAP.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint (`model.bin`, with `model.json` beside it).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score externally computed embeddings.
    EvalExternal {
        #[arg(long)]
        query_emb: Option<PathBuf>,
        #[arg(long)]
        query_meta: Option<PathBuf>,
        #[arg(long)]
        gallery_emb: Option<PathBuf>,
        #[arg(long)]
        gallery_meta: Option<PathBuf>,
    },
    /// Feature- and prediction-level invariance of baseline vs. UIT training.
    Universality {
        #[command(flatten)]
        data: DataArgs,
        /// Analysis images drawn from query + gallery.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Baseline, single-factor and all-factor training, evaluated side by side.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Rank-1 / mAP against the number of training identities.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated identity counts.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[arg(long)]
        no_uit: bool,
    },
    /// Write a synthetic train/query/gallery dataset and a matching forge.toml.
    Fixture {
        #[arg(long)]
        train_identities: Option<usize>,
        #[arg(long)]
        test_identities: Option<usize>,
        #[arg(long)]
        images_per_identity: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Augment { .. } => "augment",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::EvalExternal { .. } => "eval-external",
            Command::Universality { .. } => "universality",
            Command::Ablate { .. } => "ablate",
            Command::Sweep { .. } => "sweep",
            Command::Fixture { .. } => "fixture",
        }
    }
}

fn apply_data(cfg: &mut RunConfig, data: &DataArgs) {
    if let Some(p) = &data.train {
        cfg.data.train = Some(p.clone());
    }
    if let Some(p) = &data.query {
        cfg.data.query = Some(p.clone());
    }
    if let Some(p) = &data.gallery {
        cfg.data.gallery = Some(p.clone());
    }
}

fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

fn set_opt<T: Clone>(slot: &mut Option<T>, value: &Option<T>) {
    if value.is_some() {
        *slot = value.clone();
    }
}

/// Merges the config file (if any) with the command-line flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, &cli.seed);
    set(&mut cfg.threads, &cli.threads);
    set(&mut cfg.out, &cli.out);
    match &cli.command {
        Command::Augment { data, count } => {
            apply_data(&mut cfg, data);
            set(&mut cfg.augment.count_per_image, count);
        }
        Command::Train { data, no_uit } => {
            apply_data(&mut cfg, data);
            if *no_uit {
                cfg.uit = false;
            }
        }
        Command::Eval { data, model } => {
            apply_data(&mut cfg, data);
            set_opt(&mut cfg.model, model);
        }
        Command::EvalExternal {
            query_emb,
            query_meta,
            gallery_emb,
            gallery_meta,
        } => {
            set_opt(&mut cfg.external.query_embeddings, query_emb);
            set_opt(&mut cfg.external.query_meta, query_meta);
            set_opt(&mut cfg.external.gallery_embeddings, gallery_emb);
            set_opt(&mut cfg.external.gallery_meta, gallery_meta);
        }
        Command::Universality { data, samples } => {
            apply_data(&mut cfg, data);
            set(&mut cfg.universality.samples, samples);
        }
        Command::Ablate { data } => apply_data(&mut cfg, data),
        Command::Sweep { data, counts, no_uit } => {
            apply_data(&mut cfg, data);
            set(&mut cfg.sweep.counts, counts);
            if *no_uit {
                cfg.uit = false;
            }
        }
        Command::Fixture {
            train_identities,
            test_identities,
            images_per_identity,
        } => {
            set(&mut cfg.fixture.train_identities, train_identities);
            set(&mut cfg.fixture.test_identities, test_identities);
            set(&mut cfg.fixture.images_per_identity, images_per_identity);
            set(&mut cfg.fixture.seed, &cli.seed);
        }
    }
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Augment { .. } => commands::augment(cfg),
        Command::Train { .. } => commands::train(cfg),
        Command::Eval { .. } => commands::eval(cfg),
        Command::EvalExternal { .. } => commands::eval_external(cfg),
        Command::Universality { .. } => commands::universality_cmd(cfg),
        Command::Ablate { .. } => commands::ablate(cfg),
        Command::Sweep { .. } => commands::sweep_cmd(cfg),
        Command::Fixture { .. } => commands::fixture_cmd(cfg),
    }
}

fn unix_seconds() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn append_run_log(cfg: &RunConfig, line: &str) -> Result<()> {
    let path = cfg.out.join("run.log");
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(file, "{line}").map_err(|e| Error::io(&path, e))
}

/// Runs one parsed invocation.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    commands::write_file(&cfg.out.join("config.toml"), cfg.to_toml())?;
    let name = cli.command.name();
    append_run_log(
        &cfg,
        &format!("{name} started unix={:.3} threads={} out={}", unix_seconds(), cfg.threads, cfg.out.display()),
    )?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Input(format!("cannot build a pool of {} threads: {e}", cfg.threads)))?;
    let clock = Instant::now();
    let result = pool.install(|| dispatch(&cli.command, &cfg));
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("failed ({e})"),
    };
    append_run_log(
        &cfg,
        &format!("{name} finished unix={:.3} elapsed_s={:.3} status={status}", unix_seconds(), clock.elapsed().as_secs_f64()),
    )?;
    result
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FORGE_LOG", "info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => exit_codes::SUCCESS,
        Err(e) => {
            eprintln!("forge: {e}");
            e.exit_code()
        }
    }
}
