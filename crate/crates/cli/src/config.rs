//! TOML run configuration.
//!
//! ```toml
//! task = "classify"
//! seed = 1
//!
//! [data]
//! train = "mnist"          # MNIST directory, or a labeled scene file
//! mnist_mode = "gray_levels"
//! train_limit = 10000
//! test_limit = 2000
//!
//! [model]
//! variant = "desk"
//!
//! [training]
//! epochs = 10
//! batch_size = 16
//! learning_rate = 0.001
//! ```
//!
//! Relative data paths are resolved against `CONVPOINT_DATA_ROOT` when it
//! is set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use convpoint::networks::{Architecture, ClassificationConfig, SegmentationConfig};
use convpoint::optim::AdamConfig;
use convpoint::pipeline::mnist::{MnistMode, NUM_CLASSES};
use convpoint::pipeline::scene::SceneConfig;
use convpoint::pipeline::{EvalConfig, TrainConfig};
use convpoint::Execution;

use crate::CliError;

pub const DATA_ROOT_VAR: &str = "CONVPOINT_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    Segment,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Classification: the five-layer default ladder.
    Standard,
    /// Reduced networks for single-core runs (both tasks).
    #[default]
    Desk,
    /// Segmentation: the ladder without conv0/conv1/deconv0.
    Small,
    /// Segmentation: the full ladder.
    Large,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    /// Spatial samplings averaged at evaluation time.
    #[serde(default = "one")]
    pub samplings: usize,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub scene: SceneOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// MNIST directory (classify) or labeled point-cloud file (segment).
    pub train: PathBuf,
    /// Evaluation data; for MNIST defaults to the test split of `train`.
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default = "gray")]
    pub mnist_mode: MnistMode,
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
    /// Segmentation: number of training columns cut from the scene.
    #[serde(default = "default_columns")]
    pub columns: usize,
    /// Segmentation: number of classes (defaults to max label + 1).
    #[serde(default)]
    pub num_classes: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub dropout: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "one_f")]
    pub lr_decay: f64,
    #[serde(default)]
    pub input_points: Option<usize>,
    /// Clouds used for data-dependent initialisation; 0 disables it.
    #[serde(default = "default_calibration")]
    pub calibration_samples: usize,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: AdamConfig::default().lr,
            lr_decay: 1.0,
            input_points: None,
            calibration_samples: default_calibration(),
            execution: Execution::Sequential,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneOptions {
    pub column_width: f64,
    pub pixel_size: f64,
    pub column_points: usize,
}

impl Default for SceneOptions {
    fn default() -> Self {
        let s = SceneConfig::default();
        Self {
            column_width: s.column_width,
            pixel_size: s.pixel_size,
            column_points: s.column_points,
        }
    }
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

fn gray() -> MnistMode {
    MnistMode::GrayLevels
}

fn default_calibration() -> usize {
    64
}

fn default_columns() -> usize {
    200
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        match (self.task, self.model.variant) {
            (Task::Classify, Variant::Small | Variant::Large) => return bad("small/large are segmentation variants"),
            (Task::Segment, Variant::Standard) => return bad("standard is a classification variant"),
            _ => {}
        }
        if self.samplings == 0 {
            return bad("samplings must be >= 1");
        }
        if self.data.columns == 0 || self.data.num_classes == Some(0) {
            return bad("columns and num_classes must be positive");
        }
        if self.data.train_limit == Some(0) || self.data.test_limit == Some(0) {
            return bad("data limits must be positive");
        }
        let s = &self.scene;
        if !(s.column_width > 0.0) || !(s.pixel_size > 0.0) || s.column_points == 0 {
            return bad("scene column width, pixel size and points must be positive");
        }
        if let Some(p) = self.model.dropout {
            if !(0.0..1.0).contains(&p) {
                return bad("dropout must lie in [0, 1)");
            }
        }
        self.train_config().validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: AdamConfig {
                lr: t.learning_rate,
                ..AdamConfig::default()
            },
            lr_decay: t.lr_decay,
            input_points: t.input_points,
            calibration_samples: t.calibration_samples,
            seed: self.seed,
            execution: t.execution,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            samplings: self.samplings,
            input_points: self.training.input_points,
            seed: self.seed,
            execution: self.training.execution,
        }
    }

    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig {
            column_width: self.scene.column_width,
            pixel_size: self.scene.pixel_size,
            column_points: self.scene.column_points,
            samplings: self.samplings,
            seed: self.seed,
            execution: self.training.execution,
        }
    }

    /// Network description for the configured task; segmentation needs the
    /// data's feature width, dimension and class count.
    pub fn architecture(&self, input_features: usize, dim: usize, num_classes: usize) -> Architecture {
        match self.task {
            Task::Classify => {
                let mut c = match self.model.variant {
                    Variant::Standard => ClassificationConfig::standard(NUM_CLASSES, input_features, dim),
                    _ => ClassificationConfig::desk(NUM_CLASSES, input_features, dim),
                };
                if let Some(p) = self.model.dropout {
                    c.dropout = p;
                }
                Architecture::Classification(c)
            }
            Task::Segment => {
                let mut c = match self.model.variant {
                    Variant::Small => SegmentationConfig::small(num_classes, input_features, dim),
                    Variant::Large => SegmentationConfig::large(num_classes, input_features, dim),
                    _ => SegmentationConfig::desk(num_classes, input_features, dim),
                };
                if let Some(p) = self.model.dropout {
                    c.dropout = p;
                }
                Architecture::Segmentation(c)
            }
        }
    }
}

/// Resolves a data path against the data root variable.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_VAR) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}
