//! Pipeline configuration, read from TOML and overridden by flags.

use std::path::Path;

use dprong_core::sim::Scenario;
use dprong_nn::model::DEFAULT_ALPHA;
use dprong_nn::{ModelConfig, ModelKind, ProngConfig, Stage, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::dataset::BuildOptions;
use crate::error::{CliError, IoContext, Result};
use crate::render::Palette;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub count: usize,
    pub duration_s: f64,
    pub seed: u64,
    /// Scene families, cycled over sequence indices.
    pub scenarios: Vec<Scenario>,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        // 30 frames at 10 Hz: 10 warm-up frames and a 20-frame window.
        SimulateSettings { count: 850, duration_s: 3.0, seed: 0, scenarios: Scenario::ALL.to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelMode {
    Double,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub mode: ModelMode,
    pub static_widths: Vec<usize>,
    pub static_dilations: Vec<usize>,
    pub dynamic_widths: Vec<usize>,
    pub dynamic_dilations: Vec<usize>,
    pub kernel: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let (s, d) = (ProngConfig::static_default(), ProngConfig::dynamic_default());
        ModelSettings {
            mode: ModelMode::Double,
            static_widths: s.widths,
            static_dilations: s.dilations,
            dynamic_widths: d.widths,
            dynamic_dilations: d.dilations,
            kernel: s.kernel,
            alpha: DEFAULT_ALPHA,
            seed: 0,
        }
    }
}

impl ModelSettings {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            kind: match self.mode {
                ModelMode::Double => ModelKind::DoubleProng,
                ModelMode::Single => ModelKind::SingleProng,
            },
            static_prong: ProngConfig {
                widths: self.static_widths.clone(),
                dilations: self.static_dilations.clone(),
                kernel: self.kernel,
            },
            dynamic_prong: ProngConfig {
                widths: self.dynamic_widths.clone(),
                dilations: self.dynamic_dilations.clone(),
                kernel: self.kernel,
            },
            alpha: self.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub next_frame_epochs: usize,
    pub finetune_epochs: usize,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    pub input_frames: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            next_frame_epochs: t.epochs,
            finetune_epochs: t.epochs,
            samples_per_epoch: t.samples_per_epoch,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            clip_norm: t.clip_norm,
            input_frames: t.input_frames,
            horizon: t.horizon,
            seed: t.seed,
        }
    }
}

impl TrainSettings {
    pub fn stage_config(&self, stage: Stage) -> TrainConfig {
        let epochs = match stage {
            Stage::NextFrame => self.next_frame_epochs,
            Stage::Finetune => self.finetune_epochs,
        };
        TrainConfig {
            stage,
            input_frames: self.input_frames,
            horizon: self.horizon,
            learning_rate: self.learning_rate,
            epochs,
            samples_per_epoch: self.samples_per_epoch,
            batch_size: self.batch_size,
            clip_norm: self.clip_norm,
            // Distinct shuffles per stage from one seed.
            seed: self.seed.wrapping_add(stage as u64),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub simulate: SimulateSettings,
    pub build: BuildOptions,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub render: Palette,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(CliError::MissingInput { path: path.to_path_buf(), hint: "config file not found" });
        }
        Self::from_toml(&std::fs::read_to_string(path).at(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }
}
