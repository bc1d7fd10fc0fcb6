//! Simulated sequences to eOGM training data.
//!
//! Each simulated sequence is fused frame by frame with the inverse sensor
//! model and temporal update; after a warm-up the last `frames` maps are kept
//! together with their dynamic masks and static/dynamic splits. Sequences
//! are assigned whole to train/val/test so no split shares a scene.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dprong_core::format::{read_eogm_tensor, read_mask_tensor, read_sequence, write_eogms, write_masks};
use dprong_core::masking::{rasterize_mask_with, MaskOptions};
use dprong_core::{
    classify_moving, inverse_sensor_model, split_eogm, temporal_update, DynamicMask, Eogm, FrameSequence,
    GridSpec, PoseDelta, SensorModel, ThresholdConfig,
};
use dprong_nn::{SequenceSample, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, IoContext, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FULL_FILE: &str = "full.eogm";
pub const STATIC_FILE: &str = "static.eogm";
pub const DYNAMIC_FILE: &str = "dynamic.eogm";
pub const MASK_FILE: &str = "mask.mask";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Relative sizes of the three splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitWeights {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitWeights {
    fn default() -> Self {
        SplitWeights { train: 600.0, val: 100.0, test: 150.0 }
    }
}

impl SplitWeights {
    /// `(train, val, test)` counts for `n` sequences; val and test are
    /// rounded and train takes the remainder.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        let w = [self.train, self.val, self.test];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(w.iter().sum::<f64>() > 0.0) {
            return Err(CliError::Usage(format!("split weights {self:?}")));
        }
        let total = w.iter().sum::<f64>();
        let val = ((n as f64) * self.val / total).round() as usize;
        let test = (((n as f64) * self.test / total).round() as usize).min(n - val.min(n));
        let val = val.min(n);
        Ok((n - val - test, val, test))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildOptions {
    pub grid: GridSpec,
    pub thresholds: ThresholdConfig,
    pub sensor: SensorModel,
    pub mask: MaskOptions,
    /// Fused frames discarded before the kept window, so evidence has built up.
    pub warmup: usize,
    /// Frames kept per sequence.
    pub frames: usize,
    pub splits: SplitWeights,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            grid: GridSpec { width: 32, height: 32, resolution: 1.0 },
            thresholds: ThresholdConfig::default(),
            sensor: SensorModel::default(),
            mask: MaskOptions::default(),
            warmup: 10,
            frames: dprong_nn::train::SEQUENCE_FRAMES,
            splits: SplitWeights::default(),
            seed: 0,
        }
    }
}

impl BuildOptions {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.thresholds.validate()?;
        if self.frames == 0 {
            return Err(CliError::Usage("frames per sequence must be positive".into()));
        }
        Ok(())
    }
}

/// One fused sequence ready to write.
#[derive(Debug, Clone)]
pub struct BuiltSequence {
    pub full: Vec<Eogm>,
    pub masks: Vec<DynamicMask>,
}

/// Fuses a frame sequence into eOGMs and masks, keeping the last
/// `opts.frames` after at least `opts.warmup` fused frames.
pub fn build_sequence(seq: &FrameSequence, opts: &BuildOptions) -> Result<BuiltSequence> {
    let needed = opts.warmup + opts.frames;
    if seq.frames.len() < needed {
        return Err(CliError::Dataset(format!("sequence has {} frames, needs {needed}", seq.frames.len())));
    }
    let thresholds = ThresholdConfig { frame_interval: 1.0 / seq.rate_hz, ..opts.thresholds };
    let keep_from = seq.frames.len() - opts.frames;
    let mut full = Vec::with_capacity(opts.frames);
    let mut masks = Vec::with_capacity(opts.frames);
    let mut map = Eogm::vacuous(opts.grid, 0.0);
    for (t, frame) in seq.frames.iter().enumerate() {
        let meas = inverse_sensor_model(&frame.scan, &opts.grid, &opts.sensor);
        map = match t {
            0 => meas,
            _ => {
                let delta = PoseDelta::between(&seq.frames[t - 1].ego, &frame.ego);
                temporal_update(&map, &delta, &meas, opts.sensor.gamma)?
            }
        };
        map.timestamp = frame.timestamp;
        if t < keep_from {
            continue;
        }
        // The first frame has no predecessor, so nothing in it can be moving.
        let moving_ids = match t {
            0 => Default::default(),
            _ => classify_moving(&seq.frames[t - 1].boxes, &frame.boxes, &thresholds)?,
        };
        let moving: Vec<_> = frame.boxes.iter().filter(|b| moving_ids.contains(&b.track_id)).cloned().collect();
        masks.push(rasterize_mask_with(&frame.scan, &frame.ego, &moving, &opts.grid, &opts.mask));
        full.push(map.clone());
    }
    Ok(BuiltSequence { full, masks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub name: String,
    pub split: Split,
    pub frames: usize,
    /// Relative path (forward slashes) to lowercase hex SHA-256.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub grid: GridSpec,
    pub frame_interval: f64,
    pub options: BuildOptions,
    pub sequences: Vec<SequenceEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SequenceEntry> {
        self.sequences.iter().filter(move |s| s.split == split)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Subdirectories of `dir` holding a simulated sequence, sorted by name.
pub fn sequence_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::MissingInput { path: dir.to_path_buf(), hint: "run `dprong simulate` first" });
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if path.join(dprong_core::format::SCANS_FILE).is_file() {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::MissingInput { path: dir.to_path_buf(), hint: "no simulated sequences found" });
    }
    Ok(out)
}

/// Builds the dataset under `out` from every sequence in `seq_dir`.
pub fn build_dataset(seq_dir: &Path, out: &Path, opts: &BuildOptions) -> Result<DatasetManifest> {
    opts.validate()?;
    let dirs = sequence_dirs(seq_dir)?;
    let (n_train, n_val, _) = opts.splits.counts(dirs.len())?;
    let mut order: Vec<usize> = (0..dirs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let mut assigned = vec![Split::Test; dirs.len()];
    for (rank, &i) in order.iter().enumerate() {
        assigned[i] = match rank {
            r if r < n_train => Split::Train,
            r if r < n_train + n_val => Split::Val,
            _ => Split::Test,
        };
    }

    let mut frame_interval = None;
    let mut sequences = Vec::with_capacity(dirs.len());
    for (dir, split) in dirs.iter().zip(assigned) {
        let seq = read_sequence(dir)?;
        let dt = 1.0 / seq.rate_hz;
        match frame_interval {
            None => frame_interval = Some(dt),
            Some(prev) if (prev - dt).abs() > 1e-12 => {
                return Err(CliError::Dataset(format!("{} runs at {} Hz, others at {} Hz", dir.display(), seq.rate_hz, 1.0 / prev)))
            }
            _ => {}
        }
        let built = build_sequence(&seq, opts)?;
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("sequence").to_owned();
        let rel_dir = format!("{}/{name}", split.as_str());
        let abs_dir = out.join(split.as_str()).join(&name);
        fs::create_dir_all(&abs_dir).at(&abs_dir)?;

        let (mut stat, mut dynamic) = (Vec::new(), Vec::new());
        for (e, m) in built.full.iter().zip(&built.masks) {
            let (s, d) = split_eogm(e, m)?;
            stat.push(s);
            dynamic.push(d);
        }
        write_eogms(&abs_dir.join(FULL_FILE), &built.full)?;
        write_eogms(&abs_dir.join(STATIC_FILE), &stat)?;
        write_eogms(&abs_dir.join(DYNAMIC_FILE), &dynamic)?;
        write_masks(&abs_dir.join(MASK_FILE), &built.masks)?;
        let mut files = BTreeMap::new();
        for f in [FULL_FILE, STATIC_FILE, DYNAMIC_FILE, MASK_FILE] {
            let p = abs_dir.join(f);
            files.insert(format!("{rel_dir}/{f}"), sha256_hex(&fs::read(&p).at(&p)?));
        }
        sequences.push(SequenceEntry { name, split, frames: built.full.len(), files });
    }
    let manifest = DatasetManifest {
        version: dprong_core::format::FORMAT_VERSION,
        grid: opts.grid,
        frame_interval: frame_interval.unwrap_or(0.1),
        options: opts.clone(),
        sequences,
    };
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).at(&path)?;
    Ok(manifest)
}

/// A loaded sequence in its stored forms.
#[derive(Debug, Clone)]
pub struct LoadedSequence {
    pub name: String,
    pub full: Vec<Eogm>,
    pub stat: Vec<Eogm>,
    pub dynamic: Vec<Eogm>,
    pub masks: Vec<DynamicMask>,
}

impl LoadedSequence {
    pub fn to_sample(&self) -> SequenceSample {
        SequenceSample {
            full: self.full.iter().map(Tensor::from_eogm).collect(),
            stat: self.stat.iter().map(Tensor::from_eogm).collect(),
            dynamic: self.dynamic.iter().map(Tensor::from_eogm).collect(),
            masks: self.masks.iter().map(Tensor::from_mask).collect(),
        }
    }
}

/// A built dataset on disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    /// Reads the manifest; file hashes are checked when sequences load.
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(CliError::MissingInput { path, hint: "run `dprong build` first" });
        }
        let manifest: DatasetManifest = serde_json::from_slice(&fs::read(&path).at(&path)?)?;
        manifest.grid.validate()?;
        if manifest.version != dprong_core::format::FORMAT_VERSION {
            return Err(CliError::Dataset(format!("manifest version {}", manifest.version)));
        }
        Ok(Dataset { root: root.to_path_buf(), manifest })
    }

    fn read_verified(&self, entry: &SequenceEntry, file: &str) -> Result<Vec<u8>> {
        let rel = format!("{}/{}/{file}", entry.split.as_str(), entry.name);
        let want = entry.files.get(&rel).ok_or_else(|| CliError::Dataset(format!("manifest lacks {rel}")))?;
        let path = self.root.join(&rel);
        if !path.is_file() {
            return Err(CliError::MissingInput { path, hint: "dataset is incomplete; rebuild it" });
        }
        let bytes = fs::read(&path).at(&path)?;
        if &sha256_hex(&bytes) != want {
            return Err(CliError::HashMismatch(rel));
        }
        Ok(bytes)
    }

    pub fn load_entry(&self, entry: &SequenceEntry) -> Result<LoadedSequence> {
        let (res, dt) = (self.manifest.grid.resolution, self.manifest.frame_interval);
        let maps = |file: &str| -> Result<Vec<Eogm>> {
            let t = dprong_core::format::EogmTensor::decode(&self.read_verified(entry, file)?)?;
            Ok(t.to_maps(res, dt)?)
        };
        let full = maps(FULL_FILE)?;
        let stat = maps(STATIC_FILE)?;
        let dynamic = maps(DYNAMIC_FILE)?;
        let masks = dprong_core::format::MaskTensor::decode(&self.read_verified(entry, MASK_FILE)?)?.to_masks(res)?;
        let spec = self.manifest.grid;
        let n = full.len();
        if stat.len() != n || dynamic.len() != n || masks.len() != n || n != entry.frames {
            return Err(CliError::Dataset(format!("{}: streams differ in length", entry.name)));
        }
        if full[0].spec.width != spec.width || full[0].spec.height != spec.height || masks[0].spec.width != spec.width {
            return Err(CliError::Dataset(format!("{}: grid differs from manifest", entry.name)));
        }
        Ok(LoadedSequence { name: entry.name.clone(), full, stat, dynamic, masks })
    }

    pub fn load(&self, split: Split) -> Result<Vec<LoadedSequence>> {
        self.manifest.split(split).map(|e| self.load_entry(e)).collect()
    }
}

/// Reads one mask stream from a path, for tools that bypass the manifest.
pub fn read_masks(path: &Path, resolution: f64) -> Result<Vec<DynamicMask>> {
    Ok(read_mask_tensor(path)?.to_masks(resolution)?)
}

/// Reads one eOGM stream from a path.
pub fn read_maps(path: &Path, resolution: f64, frame_interval: f64) -> Result<Vec<Eogm>> {
    Ok(read_eogm_tensor(path)?.to_maps(resolution, frame_interval)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_follow_weights() {
        let w = SplitWeights::default();
        assert_eq!(w.counts(850).unwrap(), (600, 100, 150));
        assert_eq!(w.counts(17).unwrap(), (12, 2, 3));
        assert_eq!(w.counts(1).unwrap(), (1, 0, 0));
        assert_eq!(w.counts(0).unwrap(), (0, 0, 0));
        let only_test = SplitWeights { train: 0.0, val: 0.0, test: 1.0 };
        assert_eq!(only_test.counts(4).unwrap(), (0, 0, 4));
        assert!(SplitWeights { train: -1.0, val: 0.0, test: 0.0 }.counts(3).is_err());
        assert!(SplitWeights { train: 0.0, val: 0.0, test: 0.0 }.counts(3).is_err());
    }
}
