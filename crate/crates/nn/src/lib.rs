//! Double-prong occupancy predictor.
//!
//! A static prong forecasts the static part of an evidential occupancy grid
//! sequence and a dynamic prong the moving part; their outputs are fused with
//! Dempster's rule (unnormalized while training, normalized for inference).
//! Everything runs on a small `f64` reverse-mode tape ([`tape`]).

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod predict;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::{decode_loss_history, encode_loss_history, Checkpoint, NamedTensor};
pub use error::{Error, Result};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use loss::{fuse_predictions, loss_total, FusionMode, LossBreakdown};
pub use model::{prong_forward, ConvSpec, DoubleProngModel, ModelConfig, ModelKind, ProngConfig, Progress};
pub use predict::{persistence, predict, InputWindow, Prediction};
pub use tensor::{Shape, Tensor};
pub use train::{sample_loss, train, EpochRecord, SequenceSample, Stage, TrainConfig};
