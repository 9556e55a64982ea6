use std::path::PathBuf;

use melscribe::labeler::{LabelerConfig, Task, TrainConfig};
use serde::{Deserialize, Serialize};

/// Where per-recording features come from. Every source is a directory of `<audio_ref>.ssft`
/// time-rate matrices; several sources are resampled separately and concatenated per tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum FeatureSource {
    /// Log-mel matrices written by `features mel`.
    Mel(PathBuf),
    /// Matrices produced by an external model.
    Imported(PathBuf),
    Concat(Vec<PathBuf>),
}

impl FeatureSource {
    pub fn dirs(&self) -> Vec<PathBuf> {
        match self {
            FeatureSource::Mel(d) | FeatureSource::Imported(d) => vec![d.clone()],
            FeatureSource::Concat(ds) => ds.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

/// Architecture choices; the input width is taken from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub scale: Scale,
    pub layers: Option<usize>,
    pub model_dim: Option<usize>,
    pub heads: Option<usize>,
    pub ff_dim: Option<usize>,
    pub max_ticks: Option<usize>,
    pub positional: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scale: Scale::Desk,
            layers: None,
            model_dim: None,
            heads: None,
            ff_dim: None,
            max_ticks: None,
            positional: true,
        }
    }
}

impl ModelConfig {
    pub fn labeler(&self, input_dim: usize, task: Task, seed: u64) -> LabelerConfig {
        let base = match self.scale {
            Scale::Desk => LabelerConfig::desk(input_dim),
            Scale::Paper => LabelerConfig::paper(input_dim),
        };
        LabelerConfig {
            layers: self.layers.unwrap_or(base.layers),
            model_dim: self.model_dim.unwrap_or(base.model_dim),
            heads: self.heads.unwrap_or(base.heads),
            ff_dim: self.ff_dim.unwrap_or(base.ff_dim),
            max_ticks: self.max_ticks.unwrap_or(base.max_ticks),
            positional: self.positional,
            seed,
            task,
            ..base
        }
    }
}

/// The single JSON file describing a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Converted segment JSON files (with splits assigned).
    pub dataset_dir: PathBuf,
    pub features: FeatureSource,
    /// Beat-grid sidecars named `<audio_ref>.json`.
    pub beatgrid_dir: PathBuf,
    pub checkpoint: PathBuf,
    /// Optional directory for the validation history.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub task: Task,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Directories that must exist before the run starts.
    pub fn input_dirs(&self) -> Vec<PathBuf> {
        let mut dirs = vec![self.dataset_dir.clone(), self.beatgrid_dir.clone()];
        dirs.extend(self.features.dirs());
        dirs
    }
}
