//! `DPWT` checkpoints and the loss-history table.
//!
//! Layout, little-endian: `DPWT`, `u32` version, `u32` tensor count, then a
//! manifest entry per tensor (`u32` name length, UTF-8 name, `u32` rank,
//! `u32` dims), then every tensor's `f32` values in manifest order.
//!
//! Models are stored as their parameters plus `meta.*` tensors describing the
//! architecture, so a checkpoint alone rebuilds the model.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use dprong_core::format::{Reader, FORMAT_VERSION};

use crate::error::{Error, Result};
use crate::model::{DoubleProngModel, ModelConfig, ModelKind, ProngConfig, Progress};
use crate::train::{EpochRecord, Stage};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DPWT";
/// Longest accepted tensor name.
pub const MAX_NAME_LEN: usize = 1024;
/// Highest accepted tensor rank.
pub const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Corrupt { what: "checkpoint", reason: reason.into() }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Strict decoder: rejects truncation, trailing bytes, duplicate names and oversized headers.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        r.magic(CHECKPOINT_MAGIC)?;
        r.version()?;
        let count = r.u32()? as usize;
        let mut manifest = Vec::new();
        let mut names = BTreeSet::new();
        let mut total = 0usize;
        for _ in 0..count {
            let len = r.u32()? as usize;
            if len > MAX_NAME_LEN {
                return Err(corrupt(format!("tensor name of {len} bytes")));
            }
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| corrupt("tensor name is not UTF-8"))?.to_owned();
            if !names.insert(name.clone()) {
                return Err(corrupt(format!("duplicate tensor {name:?}")));
            }
            let rank = r.u32()? as usize;
            if rank > MAX_RANK {
                return Err(corrupt(format!("tensor {name:?} has rank {rank}")));
            }
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<u32>, _>>()?;
            let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
            total = n.and_then(|n| total.checked_add(n)).ok_or_else(|| corrupt("tensor sizes overflow"))?;
            manifest.push((name, dims, n.unwrap_or(0)));
        }
        r.expect_remaining(total.checked_mul(4))?;
        let tensors = manifest
            .into_iter()
            .map(|(name, dims, n)| {
                let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<f32>, _>>()?;
                Ok(NamedTensor { name, dims, data })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint { tensors })
    }
}

fn meta(name: &str, values: impl IntoIterator<Item = f32>) -> NamedTensor {
    let data: Vec<f32> = values.into_iter().collect();
    NamedTensor { name: format!("meta.{name}"), dims: vec![data.len() as u32], data }
}

fn prong_meta(prefix: &str, c: &ProngConfig) -> [NamedTensor; 3] {
    [
        meta(&format!("{prefix}.widths"), c.widths.iter().map(|&w| w as f32)),
        meta(&format!("{prefix}.dilations"), c.dilations.iter().map(|&d| d as f32)),
        meta(&format!("{prefix}.kernel"), [c.kernel as f32]),
    ]
}

impl DoubleProngModel {
    /// Parameters are narrowed to `f32`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let progress = match self.progress {
            Progress::Untrained => 0.0,
            Progress::NextFrame => 1.0,
            Progress::Finetuned => 2.0,
        };
        let kind = match self.kind() {
            ModelKind::DoubleProng => 0.0,
            ModelKind::SingleProng => 1.0,
        };
        let mut tensors =
            vec![meta("kind", [kind]), meta("alpha", [self.config.alpha as f32]), meta("progress", [progress])];
        tensors.extend(prong_meta("static", &self.config.static_prong));
        tensors.extend(prong_meta("dynamic", &self.config.dynamic_prong));
        tensors.extend(self.params.entries.iter().map(|p| NamedTensor {
            name: p.name.clone(),
            dims: p.dims.iter().map(|&d| d as u32).collect(),
            data: p.value.iter().map(|&v| v as f32).collect(),
        }));
        Checkpoint { tensors }
    }

    /// Rebuilds a model; every parameter must be present with its exact shape.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let scalar = |name: &str| -> Result<f32> {
            match ck.get(&format!("meta.{name}")) {
                Some(t) if t.data.len() == 1 => Ok(t.data[0]),
                _ => Err(corrupt(format!("missing meta.{name}"))),
            }
        };
        let ints = |name: &str| -> Result<Vec<usize>> {
            let t = ck.get(&format!("meta.{name}")).ok_or_else(|| corrupt(format!("missing meta.{name}")))?;
            t.data
                .iter()
                .map(|&v| {
                    if v.fract() == 0.0 && (0.0..=65536.0).contains(&v) {
                        Ok(v as usize)
                    } else {
                        Err(corrupt(format!("meta.{name} holds {v}")))
                    }
                })
                .collect()
        };
        let prong = |prefix: &str| -> Result<ProngConfig> {
            let kernel = ints(&format!("{prefix}.kernel"))?;
            if kernel.len() != 1 {
                return Err(corrupt(format!("meta.{prefix}.kernel must hold one value")));
            }
            Ok(ProngConfig {
                widths: ints(&format!("{prefix}.widths"))?,
                dilations: ints(&format!("{prefix}.dilations"))?,
                kernel: kernel[0],
            })
        };
        let kind = match scalar("kind")? {
            k if k == 0.0 => ModelKind::DoubleProng,
            k if k == 1.0 => ModelKind::SingleProng,
            k => return Err(corrupt(format!("unknown model kind {k}"))),
        };
        let config = ModelConfig {
            kind,
            static_prong: prong("static")?,
            dynamic_prong: prong("dynamic")?,
            alpha: f64::from(scalar("alpha")?),
        };
        config.validate().map_err(|e| corrupt(format!("architecture: {e}")))?;
        // Compare sizes before allocating, so a forged architecture cannot balloon memory.
        let stored: usize = ck.tensors.iter().filter(|t| !t.name.starts_with("meta.")).map(|t| t.data.len()).sum();
        if config.parameter_count() != stored {
            return Err(corrupt(format!("architecture needs {} parameters, file holds {stored}", config.parameter_count())));
        }
        let mut model = DoubleProngModel::new(config, 0).map_err(|e| corrupt(format!("architecture: {e}")))?;
        model.progress = match scalar("progress")? {
            p if p == 0.0 => Progress::Untrained,
            p if p == 1.0 => Progress::NextFrame,
            p if p == 2.0 => Progress::Finetuned,
            p => return Err(corrupt(format!("unknown progress {p}"))),
        };
        let expected = ck.tensors.iter().filter(|t| !t.name.starts_with("meta.")).count();
        if expected != model.params.len() {
            return Err(corrupt(format!("{expected} parameter tensors, architecture has {}", model.params.len())));
        }
        for p in &mut model.params.entries {
            let t = ck.get(&p.name).ok_or_else(|| corrupt(format!("missing tensor {}", p.name)))?;
            let dims: Vec<usize> = t.dims.iter().map(|&d| d as usize).collect();
            if dims != p.dims {
                return Err(corrupt(format!("tensor {} has dims {dims:?}, want {:?}", p.name, p.dims)));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(corrupt(format!("tensor {} holds non-finite values", p.name)));
            }
            p.value = t.data.iter().map(|&v| f64::from(v)).collect();
        }
        Ok(model)
    }
}

/// `epoch stage mean_loss` rows under a header comment.
pub fn encode_loss_history(history: &[EpochRecord]) -> String {
    let mut s = String::from("# epoch stage mean_loss\n");
    for r in history {
        let _ = writeln!(s, "{} {} {:e}", r.epoch, r.stage.as_str(), r.mean_loss);
    }
    s
}

pub fn decode_loss_history(text: &str) -> Result<Vec<EpochRecord>> {
    let bad = |line: usize, why: &str| Error::Corrupt { what: "loss history", reason: format!("line {line}: {why}") };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(bad(line_no, "expected 3 fields"));
        }
        let epoch = f[0].parse().map_err(|_| bad(line_no, "bad epoch"))?;
        let stage = Stage::parse(f[1]).ok_or_else(|| bad(line_no, "unknown stage"))?;
        let mean_loss = f[2].parse().map_err(|_| bad(line_no, "bad loss"))?;
        out.push(EpochRecord { epoch, stage, mean_loss });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            tensors: vec![
                NamedTensor { name: "a".into(), dims: vec![2, 3], data: vec![1.0, -2.5, 3.0, f32::MIN_POSITIVE, 0.0, -0.0] },
                NamedTensor { name: "scalar".into(), dims: vec![], data: vec![7.0] },
                NamedTensor { name: "empty".into(), dims: vec![0, 4], data: vec![] },
            ],
        }
    }

    #[test]
    fn header_layout() {
        let b = sample().encode();
        assert_eq!(&b[..4], b"DPWT");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(b[16], b'a');
        assert_eq!(u32::from_le_bytes(b[17..21].try_into().unwrap()), 2);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::decode(&c.encode()).unwrap();
        assert_eq!(back.tensors.len(), 3);
        for (a, b) in c.tensors.iter().zip(&back.tensors) {
            assert_eq!((&a.name, &a.dims), (&b.name, &b.dims));
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
    }

    #[test]
    fn every_truncation_is_rejected() {
        let b = sample().encode();
        for n in 0..b.len() {
            assert!(Checkpoint::decode(&b[..n]).is_err(), "prefix {n}");
        }
        let mut long = b.clone();
        long.push(0);
        assert!(Checkpoint::decode(&long).is_err());
    }

    #[test]
    fn hostile_headers_are_rejected() {
        let mut b = Vec::new();
        b.extend_from_slice(b"DPWT");
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.push(b'x');
        b.extend_from_slice(&3u32.to_le_bytes());
        for _ in 0..3 {
            b.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(Checkpoint::decode(&b).is_err());
        let mut dup = sample();
        dup.tensors[1].name = "a".into();
        assert!(Checkpoint::decode(&dup.encode()).is_err());
        let mut bad_magic = sample().encode();
        bad_magic[0] = b'X';
        assert!(Checkpoint::decode(&bad_magic).is_err());
    }

    #[test]
    fn model_round_trip() {
        for config in [ModelConfig::tiny(), ModelConfig::tiny().single()] {
            let mut m = DoubleProngModel::new(config, 5).unwrap();
            m.progress = Progress::NextFrame;
            let ck = m.to_checkpoint();
            let back = DoubleProngModel::from_checkpoint(&Checkpoint::decode(&ck.encode()).unwrap()).unwrap();
            assert_eq!(back.config, m.config);
            assert_eq!(back.progress, Progress::NextFrame);
            for (a, b) in m.params.entries.iter().zip(&back.params.entries) {
                assert_eq!(a.name, b.name);
                assert!(a.value.iter().zip(&b.value).all(|(x, y)| (*x as f32) as f64 == *y));
            }
            // Once narrowed, saving again is lossless.
            assert_eq!(back.to_checkpoint(), ck);
        }
    }

    #[test]
    fn model_rejects_mismatched_tensors() {
        let m = DoubleProngModel::new(ModelConfig::tiny(), 5).unwrap();
        let mut ck = m.to_checkpoint();
        ck.tensors.pop();
        assert!(DoubleProngModel::from_checkpoint(&ck).is_err());
        let mut ck = m.to_checkpoint();
        let last = ck.tensors.last_mut().unwrap();
        last.dims.push(1);
        assert!(DoubleProngModel::from_checkpoint(&ck).is_err());
        let mut ck = m.to_checkpoint();
        ck.tensors.retain(|t| t.name != "meta.alpha");
        assert!(DoubleProngModel::from_checkpoint(&ck).is_err());
    }

    #[test]
    fn loss_history_round_trip() {
        let h = vec![
            EpochRecord { epoch: 1, stage: Stage::NextFrame, mean_loss: 1.25 },
            EpochRecord { epoch: 2, stage: Stage::NextFrame, mean_loss: 0.1 + 0.2 },
            EpochRecord { epoch: 1, stage: Stage::Finetune, mean_loss: 3e-7 },
        ];
        let text = encode_loss_history(&h);
        assert!(text.starts_with("# epoch stage mean_loss\n1 next-frame "));
        assert_eq!(decode_loss_history(&text).unwrap(), h);
        assert!(decode_loss_history("1 sideways 0.5").is_err());
        assert!(decode_loss_history("1 finetune").is_err());
    }
}
