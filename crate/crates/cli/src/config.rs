//! Experiment configuration files.
//!
//! A config is a TOML document. Relative paths (`out_dir`, manifest files)
//! are resolved against the directory holding the config file.
//!
//! ```toml
//! modes = ["sl", "sl+ca+ln", "sl+sce+ca+ln"]
//! seeds = [0, 1, 2]
//! out_dir = "results"
//!
//! [stream]
//! kind = "preset"
//! name = "fine"
//!
//! [model]
//! layers = [64, 32]
//! activation = "gelu"
//!
//! [rates]
//! backbone = 0.0001
//! hybrid = 0.001
//! head = 0.01
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use slca_core::data::{BenchmarkSpec, StreamManifest, TaskStream, Dataset, Split, load_csv};
use slca_core::engine::{AlignConfig, AlignSchedule, CovVariant, HeadView, LoraConfig, Method, PretrainConfig, RunConfig};
use slca_core::losses::SceConfig;
use slca_core::nn::{Activation, LearningRates, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamSpec {
    /// One of the built-in synthetic benchmarks.
    Preset { name: Preset },
    /// A fully specified synthetic benchmark.
    Synthetic { spec: BenchmarkSpec },
    /// A task stream on disk plus CSV files for pre-training.
    Manifest {
        path: PathBuf,
        pretrain_train: PathBuf,
        pretrain_test: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    /// Hidden and feature widths; the input width comes from the data.
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub pretrain: PretrainConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            layers: vec![64, 32],
            activation: Activation::Gelu,
            pretrain: PretrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSpec {
    pub covariance: CovVariant,
    pub momentum: f64,
}

impl Default for StatsSpec {
    fn default() -> Self {
        let run = RunConfig::default();
        Self {
            covariance: run.cov,
            momentum: run.cov_momentum,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stream: StreamSpec,
    pub modes: Vec<Method>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub rates: LearningRates,
    #[serde(default)]
    pub loss: SceConfig,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(default)]
    pub lora: LoraConfig,
    #[serde(default)]
    pub sgd: SgdConfig,
    #[serde(default)]
    pub stats: StatsSpec,
    #[serde(default)]
    pub align_schedule: AlignSchedule,
    #[serde(default)]
    pub head_view: HeadView,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Save a model checkpoint after every stage.
    #[serde(default = "yes")]
    pub checkpoints: bool,
    pub out_dir: PathBuf,
}

fn yes() -> bool {
    true
}

/// A parsed config together with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base: PathBuf,
}

/// Everything one seed needs: pre-training data and the task stream.
pub struct SeedData {
    pub pretrain_train: Dataset,
    pub pretrain_test: Dataset,
    pub stream: TaskStream,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.modes.is_empty(), "modes: at least one mode is required");
        let mut names = BTreeSet::new();
        for m in &self.modes {
            ensure!(names.insert(m.to_string()), "modes: `{m}` listed twice");
        }
        ensure!(!self.seeds.is_empty(), "seeds: at least one seed is required");
        ensure!(
            self.seeds.iter().collect::<BTreeSet<_>>().len() == self.seeds.len(),
            "seeds: duplicate seed"
        );
        ensure!(!self.model.layers.is_empty(), "model.layers: at least one layer is required");
        ensure!(self.model.layers.iter().all(|&w| w > 0), "model.layers: widths must be positive");
        let p = &self.model.pretrain;
        ensure!(p.lr > 0.0 && p.lr.is_finite(), "model.pretrain.lr must be positive");
        p.sgd.validate().context("model.pretrain.sgd")?;
        self.rates.validate().context("rates")?;
        self.sgd.validate().context("sgd")?;
        self.loss.validate().context("loss")?;
        self.align.validate().context("align")?;
        ensure!(self.lora.rank >= 1, "lora.rank must be >= 1");
        ensure!(
            (0.0..=1.0).contains(&self.stats.momentum),
            "stats.momentum must lie in [0, 1]"
        );
        if let StreamSpec::Synthetic { spec } = &self.stream {
            spec.validate().context("stream.spec")?;
        }
        ensure!(!self.out_dir.as_os_str().is_empty(), "out_dir must not be empty");
        self.run_config().validate()?;
        Ok(())
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            rates: self.rates,
            sgd: self.sgd,
            sce: self.loss,
            align: self.align,
            cov: self.stats.covariance,
            cov_momentum: self.stats.momentum,
            lora: self.lora.clone(),
            align_schedule: self.align_schedule,
            head_view: self.head_view,
        }
    }

    /// Hash of everything that determines a run of `mode`, independent of
    /// the seed list and the output location.
    pub fn digest(&self, mode: &Method) -> Result<String> {
        let mut c = self.clone();
        c.modes = vec![*mode];
        c.seeds = Vec::new();
        c.out_dir = PathBuf::new();
        c.checkpoints = false;
        // serde_json maps are sorted, which makes the text canonical.
        let value = serde_json::to_value(&c)?;
        Ok(hex(&Sha256::digest(value.to_string().as_bytes())))
    }
}

pub fn fingerprint(digest: &str, seed: u64) -> String {
    hex(&Sha256::digest(format!("{digest}:{seed}").as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config = ExperimentConfig::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { config, base };
        if let StreamSpec::Manifest {
            path,
            pretrain_train,
            pretrain_test,
        } = &loaded.config.stream
        {
            for (key, p) in [("path", path), ("pretrain_train", pretrain_train), ("pretrain_test", pretrain_test)] {
                let full = loaded.resolve(p);
                ensure!(full.is_file(), "invalid config: stream.{key}: {} not found", full.display());
            }
        }
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.config.out_dir)
    }

    pub fn seed_data(&self, seed: u64) -> Result<SeedData> {
        let spec = match &self.config.stream {
            StreamSpec::Preset { name: Preset::Coarse } => BenchmarkSpec::coarse(),
            StreamSpec::Preset { name: Preset::Fine } => BenchmarkSpec::fine(),
            StreamSpec::Synthetic { spec } => spec.clone(),
            StreamSpec::Manifest {
                path,
                pretrain_train,
                pretrain_test,
            } => {
                return Ok(SeedData {
                    pretrain_train: load_csv(&self.resolve(pretrain_train), Split::Train)?,
                    pretrain_test: load_csv(&self.resolve(pretrain_test), Split::Test)?,
                    stream: StreamManifest::load(&self.resolve(path))?,
                });
            }
        };
        let b = spec.build(seed)?;
        Ok(SeedData {
            pretrain_train: b.pretrain_train,
            pretrain_test: b.pretrain_test,
            stream: b.stream,
        })
    }
}

/// File-system friendly name of a mode, e.g. `sl_sce_ca_ln`.
pub fn mode_slug(m: &Method) -> String {
    m.to_string().replace('+', "_").replace(':', "-")
}

pub fn check_mode_fits(m: &Method, stream: &TaskStream) -> Result<()> {
    if m.ca && stream.scenario == slca_core::data::Scenario::DomainIncremental {
        bail!("mode `{m}`: classifier alignment needs a class-incremental stream");
    }
    Ok(())
}
