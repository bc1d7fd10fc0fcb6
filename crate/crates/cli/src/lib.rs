//! End-to-end pipeline around the double-prong predictor: scene simulation,
//! dataset building, training, prediction, evaluation and rendering.
//!
//! The `dprong` binary is a thin argument layer over these functions.

pub mod config;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod render;

pub use config::{ModelMode, ModelSettings, PipelineConfig, SimulateSettings, TrainSettings};
pub use dataset::{build_dataset, build_sequence, BuildOptions, Dataset, DatasetManifest, LoadedSequence, Split};
pub use error::{exit_code, CliError, Result};
pub use pipeline::{
    evaluate_dir, evaluate_sequences, predict_sequences, predict_to_dir, simulate_scenes, train_model, train_to_dir, PredictMode,
    SequencePrediction,
};
