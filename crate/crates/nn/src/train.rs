//! Two-stage training: one-step prediction, then multi-step fine-tuning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dprong_core::{split_eogm, DynamicMask, Eogm};

use crate::error::{shape, Error, Result};
use crate::loss::{loss_on_tape, LossBreakdown, StepTarget};
use crate::model::{check_frames, tape_frames, DoubleProngModel, ModelKind, ParamStore, Progress};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{ensure_same, Shape, Tensor};

/// Frames of a full training sequence.
pub const SEQUENCE_FRAMES: usize = 20;
/// Teacher-forced frames before extrapolation.
pub const INPUT_FRAMES: usize = 5;
/// Extrapolated frames in the fine-tuning stage.
pub const HORIZON: usize = 15;

/// One sequence of aligned full, static and dynamic eOGMs and masks.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub full: Vec<Tensor>,
    pub stat: Vec<Tensor>,
    pub dynamic: Vec<Tensor>,
    pub masks: Vec<Tensor>,
}

impl SequenceSample {
    /// Splits each full map by its mask.
    pub fn from_maps(full: &[Eogm], masks: &[DynamicMask]) -> Result<Self> {
        if full.len() != masks.len() {
            return Err(shape(format!("{} maps vs {} masks", full.len(), masks.len())));
        }
        let mut s = SequenceSample { full: vec![], stat: vec![], dynamic: vec![], masks: vec![] };
        for (e, m) in full.iter().zip(masks) {
            let (st, dy) = split_eogm(e, m)?;
            s.full.push(Tensor::from_eogm(e));
            s.stat.push(Tensor::from_eogm(&st));
            s.dynamic.push(Tensor::from_eogm(&dy));
            s.masks.push(Tensor::from_mask(m));
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.full.len()
    }

    pub fn is_empty(&self) -> bool {
        self.full.is_empty()
    }

    /// Shape of one `(m_o, m_f)` frame, after checking every stream agrees.
    pub fn frame_shape(&self) -> Result<Shape> {
        let first = self.full.first().ok_or_else(|| shape("empty sequence"))?;
        let n = self.len();
        if self.stat.len() != n || self.dynamic.len() != n || self.masks.len() != n {
            return Err(shape("sequence streams differ in length"));
        }
        for t in 0..n {
            ensure_same("full frame", first.shape, self.full[t].shape)?;
            ensure_same("static frame", first.shape, self.stat[t].shape)?;
            ensure_same("dynamic frame", first.shape, self.dynamic[t].shape)?;
            ensure_same("mask", first.shape.with_channels(1), self.masks[t].shape)?;
        }
        Ok(first.shape)
    }
}

/// Training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Teacher-forced over the whole sequence; loss on every one-step prediction.
    NextFrame,
    /// `input_frames` teacher-forced, then `horizon` extrapolated frames.
    Finetune,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::NextFrame => "next-frame",
            Stage::Finetune => "finetune",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "next-frame" => Some(Stage::NextFrame),
            "finetune" => Some(Stage::Finetune),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub input_frames: usize,
    pub horizon: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    /// Rescales the batch gradient when its global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::NextFrame,
            input_frames: INPUT_FRAMES,
            horizon: HORIZON,
            learning_rate: 1e-5,
            epochs: 60,
            samples_per_epoch: 2000,
            batch_size: 4,
            clip_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.input_frames == 0 || self.horizon == 0 {
            return bad("input frames and horizon must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.epochs == 0 || self.samples_per_epoch == 0 || self.batch_size == 0 {
            return bad("epochs, samples per epoch and batch size must be positive");
        }
        if self.clip_norm.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }

    /// Frames a sample must provide for this stage.
    pub fn frames_needed(&self) -> usize {
        match self.stage {
            Stage::NextFrame => 2,
            Stage::Finetune => self.input_frames + self.horizon,
        }
    }
}

/// Mean training loss of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub mean_loss: f64,
}

/// One sample's recorded graph.
pub(crate) struct SampleGraph {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub full: Var,
    pub dynamic: Option<Var>,
    pub total: Var,
}

impl SampleGraph {
    pub fn breakdown(&self) -> LossBreakdown {
        let full = self.tape.scalar(self.full);
        let dynamic = self.dynamic.map_or(0.0, |d| self.tape.scalar(d));
        LossBreakdown { full, dynamic, total: self.tape.scalar(self.total) }
    }

    pub fn gradients(&self) -> Gradients {
        self.tape.backward(self.total)
    }
}

/// Records the forward pass and loss for one sample.
pub(crate) fn sample_graph(
    model: &DoubleProngModel,
    sample: &SequenceSample,
    stage: Stage,
    input_frames: usize,
    horizon: usize,
) -> Result<SampleGraph> {
    let shape = sample.frame_shape()?;
    let (k, h) = match stage {
        Stage::NextFrame => (sample.len(), 0),
        Stage::Finetune => (input_frames, horizon),
    };
    if sample.len() < k + h || k + h < 2 {
        return Err(crate::error::shape(format!("stage {} needs {} frames, sample has {}", stage.as_str(), (k + h).max(2), sample.len())));
    }
    let targets: Vec<StepTarget> = match stage {
        Stage::NextFrame => (1..k).map(|t| StepTarget::new(&sample.full[t], &sample.masks[t])).collect(),
        Stage::Finetune => (k..k + h).map(|t| StepTarget::new(&sample.full[t], &sample.masks[t])).collect(),
    };
    let pick = |o: crate::model::ProngOutputs| if stage == Stage::NextFrame { o.teacher } else { o.rollout };
    let mut tape = Tape::new();
    let params = model.params.bind(&mut tape);
    let (full_pred, dyn_pred) = match (model.kind(), &model.dynamic_prong) {
        (ModelKind::DoubleProng, Some(dynamic)) => {
            check_frames("static inputs", &sample.stat[..k], &model.static_prong)?;
            check_frames("dynamic inputs", &sample.dynamic[..k], dynamic)?;
            let xs = tape_frames(&mut tape, &sample.stat[..k]);
            let xd = tape_frames(&mut tape, &sample.dynamic[..k]);
            let s = pick(model.static_prong.run(&mut tape, &params, &xs, h));
            let d = pick(dynamic.run(&mut tape, &params, &xd, h));
            let fused = s.iter().zip(&d).map(|(&a, &b)| tape.fuse_unnormalized(a, b)).collect();
            (fused, Some(d))
        }
        _ => {
            check_frames("full inputs", &sample.full[..k], &model.static_prong)?;
            let x = tape_frames(&mut tape, &sample.full[..k]);
            (pick(model.static_prong.run(&mut tape, &params, &x, h)), None)
        }
    };
    debug_assert_eq!(tape.shape(full_pred[0]), shape);
    let (dynamic, full, total) = loss_on_tape(&mut tape, &full_pred, dyn_pred.as_deref(), &targets, model.alpha());
    Ok(SampleGraph { tape, params, full, dynamic, total })
}

/// Objective of one sample under `cfg`'s stage, without gradients.
pub fn sample_loss(model: &DoubleProngModel, sample: &SequenceSample, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let g = sample_graph(model, sample, cfg.stage, cfg.input_frames, cfg.horizon)?;
    Ok(g.breakdown())
}

/// Adam with the usual moment defaults.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Adam { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, m, v }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.entries.iter_mut().map(|e| &mut e.value).zip(grads).enumerate() {
            for j in 0..p.len() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g[j];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g[j] * g[j];
                p[j] -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
            }
        }
    }
}

/// Trains `model` in place for one stage and returns per-epoch mean losses.
///
/// Deterministic in `cfg.seed`: sample order is drawn from a seeded stream
/// and gradients are reduced in a fixed order.
pub fn train(model: &mut DoubleProngModel, data: &[SequenceSample], cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.stage == Stage::Finetune && model.progress < Progress::NextFrame {
        return Err(Error::StageOrder("finetune"));
    }
    let shape = data[0].frame_shape()?;
    for s in data {
        ensure_same("dataset frame", shape, s.frame_shape()?)?;
        if s.len() < cfg.frames_needed() {
            return Err(crate::error::shape(format!("samples need {} frames, one has {}", cfg.frames_needed(), s.len())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate, model.params.entries.iter().map(|p| p.value.len()));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut epoch_order = Vec::with_capacity(cfg.samples_per_epoch);
        while epoch_order.len() < cfg.samples_per_epoch {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
            }
            epoch_order.push(order.pop().unwrap());
        }
        let mut loss_sum = 0.0;
        for batch in epoch_order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f64>> = model.params.entries.iter().map(|p| vec![0.0; p.value.len()]).collect();
            for &i in batch {
                let g = sample_graph(model, &data[i], cfg.stage, cfg.input_frames, cfg.horizon)?;
                let loss = g.tape.scalar(g.total);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, sample: i, value: loss });
                }
                loss_sum += loss;
                let back = g.gradients();
                for (acc, &v) in grads.iter_mut().zip(&g.params) {
                    if let Some(d) = back.get(v) {
                        acc.iter_mut().zip(d).for_each(|(a, &x)| *a += x);
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mut norm2 = 0.0;
            for g in grads.iter_mut().flatten() {
                *g *= scale;
                norm2 += *g * *g;
            }
            if !norm2.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, sample: batch[0], value: norm2 });
            }
            if let Some(clip) = cfg.clip_norm {
                let norm = norm2.sqrt();
                if norm > clip {
                    grads.iter_mut().flatten().for_each(|g| *g *= clip / norm);
                }
            }
            adam.step(&mut model.params, &grads);
        }
        history.push(EpochRecord { epoch: epoch + 1, stage: cfg.stage, mean_loss: loss_sum / epoch_order.len() as f64 });
    }
    let reached = match cfg.stage {
        Stage::NextFrame => Progress::NextFrame,
        Stage::Finetune => Progress::Finetuned,
    };
    model.progress = model.progress.max(reached);
    Ok(history)
}
