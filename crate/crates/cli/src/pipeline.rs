//! The pipeline stages behind each subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use dprong_core::format::{write_eogms, write_sequence};
use dprong_core::metrics::{evaluate_horizon, HorizonReport, SequenceEval};
use dprong_core::{simulate, Eogm};
use dprong_nn::{
    encode_loss_history, persistence, predict, train, Checkpoint, DoubleProngModel, EpochRecord, InputWindow, ModelKind, Stage,
    Tensor,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelSettings, SimulateSettings, TrainSettings};
use crate::dataset::{read_maps, Dataset, LoadedSequence, Split};
use crate::error::{CliError, IoContext, Result};

pub const SCENE_FILE: &str = "scene.toml";
pub const CHECKPOINT_FILE: &str = "model.dpwt";
pub const NEXT_FRAME_CHECKPOINT_FILE: &str = "model_next_frame.dpwt";
pub const LOSS_HISTORY_FILE: &str = "loss_history.txt";
pub const PREDICTIONS_FILE: &str = "predictions.json";

/// Writes `count` simulated sequences as `seq_NNNNN/` directories.
pub fn simulate_scenes(out: &Path, s: &SimulateSettings) -> Result<Vec<PathBuf>> {
    if s.scenarios.is_empty() {
        return Err(CliError::Usage("no scenarios selected".into()));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(s.seed);
    let mut dirs = Vec::with_capacity(s.count);
    for i in 0..s.count {
        let scene = s.scenarios[i % s.scenarios.len()].generate(seeds.next_u64(), s.duration_s);
        let seq = simulate(&scene)?;
        let dir = out.join(format!("seq_{i:05}"));
        fs::create_dir_all(&dir).at(&dir)?;
        let scene_path = dir.join(SCENE_FILE);
        fs::write(&scene_path, scene.to_toml()).at(&scene_path)?;
        write_sequence(&dir, &seq)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

fn check_grid(model: &DoubleProngModel, ds: &Dataset) -> Result<()> {
    let d = model.size_divisor();
    let g = ds.manifest.grid;
    if g.width % d != 0 || g.height % d != 0 {
        return Err(CliError::Usage(format!("grid {}x{} is not divisible by {d} as the model depth requires", g.width, g.height)));
    }
    Ok(())
}

/// Trains a fresh model on the train split: next-frame stage, then finetune.
pub fn train_model(
    ds: &Dataset,
    model: &ModelSettings,
    settings: &TrainSettings,
) -> Result<(DoubleProngModel, Option<DoubleProngModel>, Vec<EpochRecord>)> {
    let mut m = DoubleProngModel::new(model.model_config(), model.seed)?;
    check_grid(&m, ds)?;
    let data: Vec<_> = ds.load(Split::Train)?.iter().map(LoadedSequence::to_sample).collect();
    if data.is_empty() {
        return Err(CliError::Dataset("train split is empty".into()));
    }
    let mut history = Vec::new();
    let mut after_next_frame = None;
    if settings.next_frame_epochs > 0 {
        history.extend(train(&mut m, &data, &settings.stage_config(Stage::NextFrame))?);
        after_next_frame = Some(m.clone());
    }
    if settings.finetune_epochs > 0 {
        history.extend(train(&mut m, &data, &settings.stage_config(Stage::Finetune))?);
    }
    Ok((m, after_next_frame, history))
}

/// Trains and writes the checkpoint(s) and loss history under `out`.
pub fn train_to_dir(dataset: &Path, out: &Path, model: &ModelSettings, settings: &TrainSettings) -> Result<Vec<EpochRecord>> {
    let ds = Dataset::open(dataset)?;
    let (m, next_frame, history) = train_model(&ds, model, settings)?;
    fs::create_dir_all(out).at(out)?;
    let write = |file: &str, m: &DoubleProngModel| -> Result<()> {
        let p = out.join(file);
        fs::write(&p, m.to_checkpoint().encode()).at(&p)
    };
    write(CHECKPOINT_FILE, &m)?;
    if let Some(nf) = &next_frame {
        write(NEXT_FRAME_CHECKPOINT_FILE, nf)?;
    }
    let p = out.join(LOSS_HISTORY_FILE);
    fs::write(&p, encode_loss_history(&history)).at(&p)?;
    Ok(history)
}

pub fn load_model(path: &Path) -> Result<DoubleProngModel> {
    if !path.is_file() {
        return Err(CliError::MissingInput { path: path.to_path_buf(), hint: "run `dprong train` first" });
    }
    Ok(DoubleProngModel::from_checkpoint(&Checkpoint::decode(&fs::read(path).at(path)?)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PredictMode {
    Double,
    Single,
    /// Repeat the last observed frame.
    Persist,
}

/// Predicted maps of one sequence.
#[derive(Debug, Clone)]
pub struct SequencePrediction {
    pub name: String,
    pub maps: Vec<Eogm>,
}

/// Predicts `horizon` frames after the first `input_frames` of each sequence.
pub fn predict_sequences(
    seqs: &[LoadedSequence],
    model: Option<&DoubleProngModel>,
    mode: PredictMode,
    input_frames: usize,
    horizon: usize,
) -> Result<Vec<SequencePrediction>> {
    if input_frames == 0 || horizon == 0 {
        return Err(CliError::Usage("input frames and horizon must be at least 1".into()));
    }
    let model = match (mode, model) {
        (PredictMode::Persist, _) => None,
        (_, None) => return Err(CliError::Usage(format!("mode {mode:?} needs a checkpoint"))),
        (_, Some(m)) => {
            let want = if mode == PredictMode::Double { ModelKind::DoubleProng } else { ModelKind::SingleProng };
            if m.kind() != want {
                return Err(CliError::Usage(format!("checkpoint holds a {:?} model, mode is {mode:?}", m.kind())));
            }
            Some(m)
        }
    };
    let mut out = Vec::with_capacity(seqs.len());
    for s in seqs {
        if s.full.len() < input_frames {
            return Err(CliError::Dataset(format!("{} has {} frames, needs {input_frames}", s.name, s.full.len())));
        }
        let last = &s.full[input_frames - 1];
        let (res, t0) = (last.spec.resolution, last.timestamp);
        let dt = if input_frames >= 2 { t0 - s.full[input_frames - 2].timestamp } else { 0.1 };
        let window = InputWindow {
            full: s.full[..input_frames].iter().map(Tensor::from_eogm).collect(),
            stat: s.stat[..input_frames].iter().map(Tensor::from_eogm).collect(),
            dynamic: s.dynamic[..input_frames].iter().map(Tensor::from_eogm).collect(),
        };
        let tensors = match model {
            None => persistence(window.full.last().expect("non-empty window"), horizon),
            Some(m) => predict(m, &window, horizon)?.full,
        };
        let maps = tensors
            .iter()
            .enumerate()
            .map(|(i, t)| t.to_eogm(res, t0 + (i + 1) as f64 * dt))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        out.push(SequencePrediction { name: s.name.clone(), maps });
    }
    Ok(out)
}

/// What a predictions directory holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionIndex {
    pub mode: PredictMode,
    pub split: Split,
    pub input_frames: usize,
    pub horizon: usize,
    pub sequences: Vec<String>,
}

/// Runs prediction over a split and writes `<name>.eogm` files plus an index.
pub fn predict_to_dir(
    dataset: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
    mode: PredictMode,
    split: Split,
    input_frames: usize,
    horizon: usize,
) -> Result<PredictionIndex> {
    let ds = Dataset::open(dataset)?;
    let model = match (mode, checkpoint) {
        (PredictMode::Persist, _) => None,
        (_, Some(p)) => Some(load_model(p)?),
        (_, None) => return Err(CliError::Usage(format!("mode {mode:?} needs --checkpoint"))),
    };
    if let Some(m) = &model {
        check_grid(m, &ds)?;
    }
    let seqs = ds.load(split)?;
    if seqs.is_empty() {
        return Err(CliError::Dataset(format!("{} split is empty", split.as_str())));
    }
    let preds = predict_sequences(&seqs, model.as_ref(), mode, input_frames, horizon)?;
    fs::create_dir_all(out).at(out)?;
    for p in &preds {
        write_eogms(&out.join(format!("{}.eogm", p.name)), &p.maps)?;
    }
    let index = PredictionIndex { mode, split, input_frames, horizon, sequences: preds.iter().map(|p| p.name.clone()).collect() };
    let path = out.join(PREDICTIONS_FILE);
    fs::write(&path, serde_json::to_string_pretty(&index)?).at(&path)?;
    Ok(index)
}

/// Scores predictions against the frames that follow each input window.
pub fn evaluate_sequences(seqs: &[LoadedSequence], preds: &[SequencePrediction], input_frames: usize, frame_interval: f64) -> Result<HorizonReport> {
    let mut set = Vec::with_capacity(preds.len());
    for p in preds {
        let s = seqs
            .iter()
            .find(|s| s.name == p.name)
            .ok_or_else(|| CliError::Dataset(format!("no ground truth for {}", p.name)))?;
        let end = input_frames + p.maps.len();
        if s.full.len() < end {
            return Err(CliError::Dataset(format!("{} has {} frames, evaluation needs {end}", s.name, s.full.len())));
        }
        set.push(SequenceEval {
            predictions: p.maps.iter().map(Eogm::to_ogm).collect(),
            targets: s.full[input_frames..end].iter().map(Eogm::to_ogm).collect(),
            masks: s.masks[input_frames..end].to_vec(),
        });
    }
    Ok(evaluate_horizon(&set, frame_interval)?)
}

/// Reads a predictions directory and scores it against the dataset.
pub fn evaluate_dir(dataset: &Path, predictions: &Path) -> Result<HorizonReport> {
    let ds = Dataset::open(dataset)?;
    let index_path = predictions.join(PREDICTIONS_FILE);
    if !index_path.is_file() {
        return Err(CliError::MissingInput { path: index_path, hint: "run `dprong predict` first" });
    }
    let index: PredictionIndex = serde_json::from_slice(&fs::read(&index_path).at(&index_path)?)?;
    let seqs = ds.load(index.split)?;
    let (res, dt) = (ds.manifest.grid.resolution, ds.manifest.frame_interval);
    let mut preds = Vec::with_capacity(index.sequences.len());
    for name in &index.sequences {
        let path = predictions.join(format!("{name}.eogm"));
        if !path.is_file() {
            return Err(CliError::MissingInput { path, hint: "prediction file listed in the index is missing" });
        }
        let maps = read_maps(&path, res, dt)?;
        if maps.len() != index.horizon {
            return Err(CliError::Dataset(format!("{name}: {} frames, index says {}", maps.len(), index.horizon)));
        }
        preds.push(SequencePrediction { name: name.clone(), maps });
    }
    evaluate_sequences(&seqs, &preds, index.input_frames, dt)
}
