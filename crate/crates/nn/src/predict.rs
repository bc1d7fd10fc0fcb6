//! Inference: both prongs with evaluation fusion, plus baselines.

use crate::error::{shape, Result};
use crate::loss::{fuse_predictions, FusionMode};
use crate::model::{prong_forward, DoubleProngModel, ModelKind};
use crate::tensor::Tensor;

/// Observed frames for one prediction.
///
/// A double-prong model reads `stat` and `dynamic`; a single-prong model and
/// the persistence baseline read `full`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputWindow {
    pub full: Vec<Tensor>,
    pub stat: Vec<Tensor>,
    pub dynamic: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Fused full-map predictions, one per step.
    pub full: Vec<Tensor>,
    /// Per-prong outputs; empty for a single-prong model.
    pub static_pred: Vec<Tensor>,
    pub dynamic_pred: Vec<Tensor>,
    /// The last observed full frame repeated over the horizon.
    pub persistence: Vec<Tensor>,
}

/// Copy-last-frame baseline.
pub fn persistence(last: &Tensor, horizon: usize) -> Vec<Tensor> {
    vec![last.clone(); horizon]
}

/// Predicts `horizon` frames after the window.
pub fn predict(model: &DoubleProngModel, window: &InputWindow, horizon: usize) -> Result<Prediction> {
    let last = window.full.last().ok_or_else(|| shape("prediction needs at least one full input frame"))?;
    let baseline = persistence(last, horizon);
    match (model.kind(), &model.dynamic_prong) {
        (ModelKind::DoubleProng, Some(dynamic)) => {
            if window.stat.len() != window.dynamic.len() {
                return Err(shape("static and dynamic windows differ in length"));
            }
            let static_pred = prong_forward(model, &model.static_prong, &window.stat, horizon)?;
            let dynamic_pred = prong_forward(model, dynamic, &window.dynamic, horizon)?;
            let full = fuse_predictions(&static_pred, &dynamic_pred, FusionMode::Eval)?;
            Ok(Prediction { full, static_pred, dynamic_pred, persistence: baseline })
        }
        _ => {
            let full = prong_forward(model, &model.static_prong, &window.full, horizon)?;
            Ok(Prediction { full, static_pred: vec![], dynamic_pred: vec![], persistence: baseline })
        }
    }
}
