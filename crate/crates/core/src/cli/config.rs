use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::TrainConfig;
use crate::dataset::{NamingRule, PreprocessConfig};
use crate::error::{Error, Result};
use crate::eval::EvalProtocol;
use crate::features::{DescriptorConfig, FeaturePipeline};
use crate::fixture::FixtureConfig;
use crate::transform::TransformSpace;

/// Dataset locations. With `manifest` set, each split directory is read
/// through the named JSON-lines manifest inside it instead of file names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gallery: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl DataConfig {
    pub fn naming(&self, dir: &Path) -> NamingRule {
        match &self.manifest {
            Some(name) => NamingRule::Manifest(dir.join(name)),
            None => NamingRule::Filename,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub count_per_image: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { count_per_image: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniversalityConfig {
    /// Size of the analysis subset drawn from query + gallery.
    pub samples: usize,
}

impl Default for UniversalityConfig {
    fn default() -> Self {
        UniversalityConfig { samples: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub counts: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            counts: vec![2, 4, 8, 16],
        }
    }
}

/// Embedding binaries (or CSV) and their meta JSON-lines for `eval-external`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExternalConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_embeddings: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_meta: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gallery_embeddings: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gallery_meta: Option<PathBuf>,
}

/// Everything a subcommand needs. `threads` and `out` are runtime placement
/// only; they are left out of the echoed `config.toml` so that the output
/// directory of a run does not depend on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing)]
    pub threads: usize,
    #[serde(skip_serializing)]
    pub out: PathBuf,
    /// Train with random transformations (`train`, `sweep`).
    pub uit: bool,
    /// Checkpoint used by `eval`; descriptors are ranked directly when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    pub data: DataConfig,
    pub transform: TransformSpace,
    pub preprocess: PreprocessConfig,
    pub descriptor: DescriptorConfig,
    pub train: TrainConfig,
    pub eval: EvalProtocol,
    pub augment: AugmentConfig,
    pub universality: UniversalityConfig,
    pub sweep: SweepConfig,
    pub external: ExternalConfig,
    pub fixture: FixtureConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 0,
            out: PathBuf::from("out"),
            uit: true,
            model: None,
            data: DataConfig::default(),
            transform: TransformSpace::default(),
            preprocess: PreprocessConfig::default(),
            descriptor: DescriptorConfig::default(),
            train: TrainConfig::default(),
            eval: EvalProtocol::default(),
            augment: AugmentConfig::default(),
            universality: UniversalityConfig::default(),
            sweep: SweepConfig::default(),
            external: ExternalConfig::default(),
            fixture: FixtureConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML text. Relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_toml(&text, base)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.data.train);
        fix(&mut self.data.query);
        fix(&mut self.data.gallery);
        fix(&mut self.model);
        fix(&mut self.external.query_embeddings);
        fix(&mut self.external.query_meta);
        fix(&mut self.external.gallery_embeddings);
        fix(&mut self.external.gallery_meta);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serialisable")
    }

    pub fn features(&self) -> FeaturePipeline {
        FeaturePipeline {
            preprocess: self.preprocess,
            descriptor: self.descriptor,
        }
    }

    /// Training configuration with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transform.validate()?;
        self.descriptor.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.preprocess.width == 0 || self.preprocess.height == 0 {
            return Err(Error::Input("preprocess size must be nonzero".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml(
            "seed = 9\n[train]\nlr = 0.5\n[transform.hue]\nmin = -30.0\nmax = 30.0\n",
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.lr, 0.5);
        assert_eq!(cfg.train.epochs, 60);
        assert!(cfg.transform.hue.enabled);
        assert_eq!(cfg.transform.hue.max, 30.0);
        assert_eq!(cfg.transform.saturation, TransformSpace::default().saturation);
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let cfg = RunConfig::from_toml("[data]\ntrain = \"train\"\nquery = \"/abs/q\"\n", Path::new("/root/fx")).unwrap();
        assert_eq!(cfg.data.train.unwrap(), PathBuf::from("/root/fx/train"));
        assert_eq!(cfg.data.query.unwrap(), PathBuf::from("/abs/q"));
    }

    #[test]
    fn echo_round_trips_and_omits_placement() {
        let mut cfg = RunConfig {
            threads: 8,
            out: PathBuf::from("/tmp/somewhere"),
            ..RunConfig::default()
        };
        cfg.data.train = Some(PathBuf::from("/d/train"));
        let text = cfg.to_toml();
        assert!(!text.contains("threads"));
        assert!(!text.contains("somewhere"));
        let back = RunConfig::from_toml(&text, Path::new("/")).unwrap();
        assert_eq!(back.data, cfg.data);
        assert_eq!(back.train, cfg.train);
        assert_eq!(back.transform, cfg.transform);
        assert_eq!(back.fixture, cfg.fixture);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("sed = 1\n", Path::new("/")).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
