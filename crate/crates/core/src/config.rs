//! TOML configuration for single runs and sweeps.
//!
//! A run config has four sections:
//!
//! ```toml
//! schema_version = "1"
//!
//! [dataset]
//! kind = "two_spirals"      # or "gaussian_blobs", or "csv" with `path`
//! num_samples = 1000
//! num_classes = 2
//! noise = 0.1
//! seed = 3
//!
//! [model]
//! hidden = [32, 32]
//! activation = "tanh"
//!
//! [train]
//! epochs = 40
//! batch_size = 32
//! momentum = 0.9
//! seed = 1
//!
//! [schedule]
//! family = "pol"
//! n = 1.0
//! k = 1.5
//! eta0 = 0.1
//! eta_e = 0.001
//! ```
//!
//! `schedule.t0` may be omitted; it is then derived as
//! `epochs * ceil(train_size / batch_size)`. A sweep plan replaces
//! `[schedule]` with `k_values`, `seeds` and a `[[schedules]]` array whose
//! entries carry an `id` plus the same schedule keys (any `k` is ignored).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{
    batches_per_epoch, load_csv_dataset, make_synthetic_dataset, Activation, Dataset, Loss,
    MlpModel, SyntheticKind, TrainConfig,
};
use crate::schedule::{Family, KDecayParams, ScheduleSpec, DEFAULT_ETA0, DEFAULT_ETA_E, DEFAULT_K};

pub const SCHEMA_VERSION: &str = "1";

fn schema_version() -> String {
    SCHEMA_VERSION.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    GaussianBlobs {
        num_samples: usize,
        num_classes: usize,
        noise: f64,
        seed: u64,
    },
    TwoSpirals {
        num_samples: usize,
        num_classes: usize,
        noise: f64,
        seed: u64,
    },
    /// Relative paths resolve against the config file's directory.
    Csv { path: PathBuf, seed: u64 },
}

impl DatasetSpec {
    pub fn build(&self, base_dir: &Path) -> Result<Dataset> {
        let synthetic = |kind, n, c, noise, seed| {
            make_synthetic_dataset(kind, n, c, noise, seed)
                .map_err(|e| Error::config("dataset", e.to_string()))
        };
        match self {
            DatasetSpec::GaussianBlobs {
                num_samples,
                num_classes,
                noise,
                seed,
            } => synthetic(
                SyntheticKind::GaussianBlobs,
                *num_samples,
                *num_classes,
                *noise,
                *seed,
            ),
            DatasetSpec::TwoSpirals {
                num_samples,
                num_classes,
                noise,
                seed,
            } => synthetic(
                SyntheticKind::TwoSpirals,
                *num_samples,
                *num_classes,
                *noise,
                *seed,
            ),
            DatasetSpec::Csv { path, seed } => load_csv_dataset(&base_dir.join(path), *seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

fn default_momentum() -> f64 {
    crate::harness::train::DEFAULT_MOMENTUM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub seed: u64,
    #[serde(default)]
    pub loss: Loss,
}

fn default_eta0() -> f64 {
    DEFAULT_ETA0
}
fn default_eta_e() -> f64 {
    DEFAULT_ETA_E
}
fn default_k() -> f64 {
    DEFAULT_K
}
fn default_true() -> bool {
    true
}

/// A schedule whose horizon may still be unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTemplate {
    #[serde(flatten)]
    pub family: Family,
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    #[serde(default = "default_eta_e")]
    pub eta_e: f64,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(default = "default_true")]
    pub clamp: bool,
}

impl ScheduleTemplate {
    /// Fixes the horizon. An explicit `t0` must agree with `horizon`.
    pub fn resolve(&self, horizon: f64) -> Result<ScheduleSpec> {
        if let Some(t0) = self.t0 {
            if t0 != horizon {
                return Err(Error::config(
                    "schedule.t0",
                    format!("must equal epochs x batches per epoch = {horizon}, got {t0}"),
                ));
            }
        }
        let params = KDecayParams {
            eta0: self.eta0,
            eta_e: self.eta_e,
            t0: horizon,
            k: self.k,
        };
        let spec = ScheduleSpec {
            family: self.family.clone(),
            params,
            clamp: self.clamp,
        };
        spec.validate().map_err(|e| match e {
            Error::Param { name, message } => Error::config(format!("schedule.{name}"), message),
            other => Error::config("schedule", other.to_string()),
        })?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub schema_version: String,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainSection,
    pub schedule: ScheduleTemplate,
}

/// Everything needed to start one training run.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub dataset: Dataset,
    pub model: MlpModel,
    pub train: TrainConfig,
    /// The config with `t0` filled in, as echoed into reports.
    pub echo: RunConfig,
}

fn check_schema(version: &str) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::config(
            "schema_version",
            format!("unsupported version {version:?}, expected {SCHEMA_VERSION:?}"),
        ));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string().trim_end().replace('\n', " | "),
        })?;
        check_schema(&cfg.schema_version)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// Derives the horizon from `dataset`, then builds the initial model
    /// and train config.
    pub fn resolve_with(&self, dataset: Dataset) -> Result<ResolvedRun> {
        let train_size = dataset.train.len();
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        // an empty run still needs a valid schedule; any positive horizon works
        let horizon = (t.epochs * batches_per_epoch(train_size, t.batch_size)).max(1) as f64;
        let schedule = if t.epochs == 0 {
            ScheduleTemplate {
                t0: None,
                ..self.schedule.clone()
            }
            .resolve(horizon)?
        } else {
            self.schedule.resolve(horizon)?
        };
        let train = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            momentum: t.momentum,
            seed: t.seed,
            schedule,
            loss: t.loss,
        };
        train.validate(train_size)?;

        let mut dims = vec![dataset.num_features];
        dims.extend_from_slice(&self.model.hidden);
        dims.push(dataset.num_classes);
        let model = MlpModel::new(&dims, self.model.activation, t.seed)
            .map_err(|e| Error::config("model.hidden", e.to_string()))?;

        let mut echo = self.clone();
        echo.schedule.t0 = Some(horizon);
        Ok(ResolvedRun {
            dataset,
            model,
            train,
            echo,
        })
    }

    /// `base_dir` anchors relative dataset paths.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedRun> {
        let dataset = self.dataset.build(base_dir)?;
        self.resolve_with(dataset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSchedule {
    pub id: String,
    #[serde(flatten)]
    pub schedule: ScheduleTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "schema_version")]
    pub schema_version: String,
    pub k_values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainSection,
    pub schedules: Vec<NamedSchedule>,
}

impl SweepConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string().trim_end().replace('\n', " | "),
        })?;
        check_schema(&cfg.schema_version)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("sweep config serializes to TOML")
    }

    /// The run config of one cell.
    pub fn cell_config(&self, schedule: &NamedSchedule, k: f64, seed: u64) -> RunConfig {
        RunConfig {
            schema_version: self.schema_version.clone(),
            dataset: self.dataset.clone(),
            model: self.model.clone(),
            train: TrainSection {
                seed,
                ..self.train.clone()
            },
            schedule: ScheduleTemplate {
                k,
                ..schedule.schedule.clone()
            },
        }
    }
}
