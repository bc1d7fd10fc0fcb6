//! On-disk formats.
//!
//! All binary formats are little-endian and start with a four-byte ASCII
//! magic followed by a `u32` version.
//!
//! | file | header | payload |
//! |------|--------|---------|
//! | eOGM tensor | `EOGM` ver T H W C=2 | T·H·W·2 `f32`, `(t, row, col, channel)`; channel 0 = m_o, 1 = m_f |
//! | mask tensor | `MASK` ver T H W | T·H·W bytes in {0,1}, `(t, row, col)` |
//! | scans | `SCAN` ver frames beams | per frame: `max_range`, then `(bearing, range)` per beam; `+inf` range = no return |
//!
//! Decoders never trust header sizes: the payload length must match exactly
//! before anything is allocated.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::grid::{Eogm, GridSpec};
use crate::mass::{BeliefMass, MASS_TOL};
use crate::masking::DynamicMask;
use crate::sensor::{Beam, LidarScan};
use crate::sim::{Category, Frame, FrameSequence, TrackedBox};

pub const FORMAT_VERSION: u32 = 1;

/// Bounds-checked little-endian cursor shared by the binary decoders.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::corrupt(self.what, format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::corrupt(self.what, format!("bad magic {got:?}")));
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::corrupt(self.what, format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Requires exactly `n` bytes left.
    pub fn expect_remaining(&self, n: Option<usize>) -> Result<()> {
        match n {
            Some(n) if n == self.remaining() => Ok(()),
            Some(n) => Err(Error::corrupt(
                self.what,
                format!("payload is {} bytes, header implies {n}", self.remaining()),
            )),
            None => Err(Error::corrupt(self.what, "header sizes overflow")),
        }
    }
}

fn mul_all(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Raw eOGM tensor `[T, H, W, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EogmTensor {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl EogmTensor {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.data.len() * 4);
        out.extend_from_slice(b"EOGM");
        for v in [FORMAT_VERSION, self.frames as u32, self.height as u32, self.width as u32, 2] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "eOGM tensor");
        r.magic(b"EOGM")?;
        r.version()?;
        let (t, h, w, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()?);
        if c != 2 {
            return Err(Error::corrupt("eOGM tensor", format!("expected 2 channels, got {c}")));
        }
        let n = mul_all(&[t, h, w, 2]);
        r.expect_remaining(n.and_then(|n| n.checked_mul(4)))?;
        let data = r.take(r.remaining())?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        Ok(EogmTensor { frames: t, height: h, width: w, data })
    }

    pub fn from_maps(maps: &[Eogm]) -> Result<Self> {
        let spec = maps.first().map(|m| m.spec).unwrap_or_default();
        let mut data = Vec::with_capacity(maps.len() * spec.len() * 2);
        for m in maps {
            m.ensure_same_spec(&spec)?;
            for c in &m.cells {
                data.push(c.m_o as f32);
                data.push(c.m_f as f32);
            }
        }
        Ok(EogmTensor { frames: maps.len(), height: spec.height, width: spec.width, data })
    }

    /// Converts back to maps, validating every cell. Sums exceeding one by
    /// single-precision rounding are renormalized.
    pub fn to_maps(&self, resolution: f64, frame_interval: f64) -> Result<Vec<Eogm>> {
        let spec = GridSpec::new(self.width, self.height, resolution)?;
        let n = spec.len();
        (0..self.frames)
            .map(|t| {
                let cells = self.data[t * n * 2..(t + 1) * n * 2]
                    .chunks_exact(2)
                    .map(|p| cell_from_f32(p[0], p[1]))
                    .collect::<Result<Vec<_>>>()?;
                Eogm::from_cells(spec, cells, t as f64 * frame_interval)
            })
            .collect()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.height * self.width * 2;
        &self.data[t * n..(t + 1) * n]
    }
}

fn cell_from_f32(o: f32, f: f32) -> Result<BeliefMass> {
    let (m_o, m_f) = (o as f64, f as f64);
    let ok = m_o.is_finite() && m_f.is_finite() && m_o >= 0.0 && m_f >= 0.0 && m_o + m_f <= 1.0 + 1e-6;
    if !ok {
        return Err(Error::corrupt("eOGM tensor", format!("invalid cell ({m_o}, {m_f})")));
    }
    let s = m_o + m_f;
    Ok(if s > 1.0 + MASS_TOL { BeliefMass::new(m_o / s, m_f / s) } else { BeliefMass::new(m_o, m_f) })
}

/// Raw mask tensor `[T, H, W]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTensor {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl MaskTensor {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.data.len());
        out.extend_from_slice(b"MASK");
        for v in [FORMAT_VERSION, self.frames as u32, self.height as u32, self.width as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "mask tensor");
        r.magic(b"MASK")?;
        r.version()?;
        let (t, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        r.expect_remaining(mul_all(&[t, h, w]))?;
        let data = r.take(r.remaining())?.to_vec();
        if let Some(bad) = data.iter().find(|&&b| b > 1) {
            return Err(Error::corrupt("mask tensor", format!("mask byte {bad}")));
        }
        Ok(MaskTensor { frames: t, height: h, width: w, data })
    }

    pub fn from_masks(masks: &[DynamicMask]) -> Result<Self> {
        let spec = masks.first().map(|m| m.spec).unwrap_or_default();
        let mut data = Vec::with_capacity(masks.len() * spec.len());
        for m in masks {
            if m.spec != spec {
                return Err(Error::SpecMismatch("masks in one file must share a grid".into()));
            }
            data.extend_from_slice(&m.cells);
        }
        Ok(MaskTensor { frames: masks.len(), height: spec.height, width: spec.width, data })
    }

    pub fn to_masks(&self, resolution: f64) -> Result<Vec<DynamicMask>> {
        let spec = GridSpec::new(self.width, self.height, resolution)?;
        Ok(self.data.chunks_exact(spec.len()).map(|c| DynamicMask { spec, cells: c.to_vec() }).collect())
    }
}

/// Encodes scans; all frames must carry the same beam count.
pub fn encode_scans(scans: &[LidarScan]) -> Result<Vec<u8>> {
    let beams = scans.first().map_or(0, |s| s.beams.len());
    let mut out = Vec::with_capacity(20 + scans.len() * (1 + 2 * beams) * 4);
    out.extend_from_slice(b"SCAN");
    for v in [FORMAT_VERSION, scans.len() as u32, beams as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in scans {
        if s.beams.len() != beams {
            return Err(Error::ShapeMismatch("scans must share the beam count".into()));
        }
        out.extend_from_slice(&(s.max_range as f32).to_le_bytes());
        for b in &s.beams {
            out.extend_from_slice(&(b.bearing as f32).to_le_bytes());
            out.extend_from_slice(&b.range.map_or(f32::INFINITY, |r| r as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes scans with default poses (poses live in the ego table).
pub fn decode_scans(bytes: &[u8]) -> Result<Vec<LidarScan>> {
    let mut r = Reader::new(bytes, "scan file");
    r.magic(b"SCAN")?;
    r.version()?;
    let (frames, beams) = (r.u32()? as usize, r.u32()? as usize);
    let per_frame = beams.checked_mul(2).and_then(|b| b.checked_add(1));
    r.expect_remaining(per_frame.and_then(|p| mul_all(&[frames, p, 4])))?;
    let mut scans = Vec::with_capacity(frames);
    for _ in 0..frames {
        let max_range = r.f32()? as f64;
        let mut bs = Vec::with_capacity(beams);
        for _ in 0..beams {
            let bearing = r.f32()? as f64;
            let range = r.f32()?;
            bs.push(Beam { bearing, range: (range != f32::INFINITY).then_some(range as f64) });
        }
        let scan = LidarScan { beams: bs, max_range, pose: Pose::default() };
        scan.validate().map_err(|e| Error::corrupt("scan file", e.to_string()))?;
        scans.push(scan);
    }
    Ok(scans)
}

fn table_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i, l.split_whitespace().collect()))
}

fn parse_num<T: std::str::FromStr>(field: &str, line: usize, what: &'static str) -> Result<T> {
    field.parse().map_err(|_| Error::corrupt(what, format!("line {line}: cannot parse {field:?}")))
}

fn parse_finite(field: &str, line: usize, what: &'static str) -> Result<f64> {
    let v: f64 = parse_num(field, line, what)?;
    if !v.is_finite() {
        return Err(Error::corrupt(what, format!("line {line}: non-finite value")));
    }
    Ok(v)
}

/// Track table rows: `frame id category x y heading w l`.
pub fn encode_tracks(frames: &[Frame]) -> String {
    let mut out = String::from("# frame id category x y heading w l\n");
    for (i, f) in frames.iter().enumerate() {
        for b in &f.boxes {
            let _ = writeln!(out, "{i} {} {} {} {} {} {} {}", b.track_id, b.category.as_str(), b.x, b.y, b.heading, b.width, b.length);
        }
    }
    out
}

/// Parses a track table into per-frame box lists (`frames` entries).
pub fn decode_tracks(text: &str, frames: usize) -> Result<Vec<Vec<TrackedBox>>> {
    const WHAT: &str = "track table";
    let mut out = vec![Vec::new(); frames];
    for (line, f) in table_rows(text) {
        if f.len() != 8 {
            return Err(Error::corrupt(WHAT, format!("line {line}: expected 8 fields, got {}", f.len())));
        }
        let frame: usize = parse_num(f[0], line, WHAT)?;
        let category = Category::parse(f[2]).ok_or_else(|| Error::corrupt(WHAT, format!("line {line}: category {:?}", f[2])))?;
        let b = TrackedBox {
            track_id: parse_num(f[1], line, WHAT)?,
            category,
            x: parse_finite(f[3], line, WHAT)?,
            y: parse_finite(f[4], line, WHAT)?,
            heading: parse_finite(f[5], line, WHAT)?,
            width: parse_finite(f[6], line, WHAT)?,
            length: parse_finite(f[7], line, WHAT)?,
        };
        if !(b.width > 0.0 && b.length > 0.0) {
            return Err(Error::corrupt(WHAT, format!("line {line}: non-positive box dims")));
        }
        out.get_mut(frame)
            .ok_or_else(|| Error::corrupt(WHAT, format!("line {line}: frame {frame} out of range")))?
            .push(b);
    }
    Ok(out)
}

/// Ego table: a `# rate_hz R` header, then `frame t x y heading` rows.
pub fn encode_ego(seq: &FrameSequence) -> String {
    let mut out = format!("# rate_hz {}\n# frame t x y heading\n", seq.rate_hz);
    for (i, f) in seq.frames.iter().enumerate() {
        let _ = writeln!(out, "{i} {} {} {} {}", f.timestamp, f.ego.x, f.ego.y, f.ego.heading);
    }
    out
}

/// Returns `(rate_hz, [(timestamp, pose)])`.
pub fn decode_ego(text: &str) -> Result<(f64, Vec<(f64, Pose)>)> {
    const WHAT: &str = "ego table";
    let rate = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("# rate_hz"))
        .ok_or_else(|| Error::corrupt(WHAT, "missing rate_hz header"))
        .and_then(|v| parse_finite(v.trim(), 1, WHAT))?;
    if !(rate > 0.0) {
        return Err(Error::corrupt(WHAT, "rate must be positive"));
    }
    let mut poses = Vec::new();
    for (line, f) in table_rows(text) {
        if f.len() != 5 {
            return Err(Error::corrupt(WHAT, format!("line {line}: expected 5 fields, got {}", f.len())));
        }
        let frame: usize = parse_num(f[0], line, WHAT)?;
        if frame != poses.len() {
            return Err(Error::corrupt(WHAT, format!("line {line}: frame {frame} out of order")));
        }
        let t = parse_finite(f[1], line, WHAT)?;
        let pose = Pose::new(parse_finite(f[2], line, WHAT)?, parse_finite(f[3], line, WHAT)?, parse_finite(f[4], line, WHAT)?);
        poses.push((t, pose));
    }
    Ok((rate, poses))
}

pub const TRACKS_FILE: &str = "tracks.txt";
pub const SCANS_FILE: &str = "scans.bin";
pub const EGO_FILE: &str = "ego.txt";

/// Writes a sequence directory (`tracks.txt`, `scans.bin`, `ego.txt`).
pub fn write_sequence(dir: &Path, seq: &FrameSequence) -> Result<()> {
    fs::create_dir_all(dir)?;
    let scans: Vec<LidarScan> = seq.frames.iter().map(|f| f.scan.clone()).collect();
    fs::write(dir.join(SCANS_FILE), encode_scans(&scans)?)?;
    fs::write(dir.join(TRACKS_FILE), encode_tracks(&seq.frames))?;
    fs::write(dir.join(EGO_FILE), encode_ego(seq))?;
    Ok(())
}

pub fn read_sequence(dir: &Path) -> Result<FrameSequence> {
    let scans = decode_scans(&fs::read(dir.join(SCANS_FILE))?)?;
    let (rate_hz, poses) = decode_ego(&fs::read_to_string(dir.join(EGO_FILE))?)?;
    let boxes = decode_tracks(&fs::read_to_string(dir.join(TRACKS_FILE))?, scans.len())?;
    if poses.len() != scans.len() {
        return Err(Error::corrupt("sequence", format!("{} poses for {} scans", poses.len(), scans.len())));
    }
    let frames = scans
        .into_iter()
        .zip(poses)
        .zip(boxes)
        .map(|((mut scan, (timestamp, ego)), boxes)| {
            scan.pose = ego;
            Frame { timestamp, ego, scan, boxes }
        })
        .collect();
    Ok(FrameSequence { rate_hz, frames })
}

pub fn write_eogms(path: &Path, maps: &[Eogm]) -> Result<()> {
    Ok(fs::write(path, EogmTensor::from_maps(maps)?.encode())?)
}

pub fn read_eogm_tensor(path: &Path) -> Result<EogmTensor> {
    EogmTensor::decode(&fs::read(path)?)
}

pub fn write_masks(path: &Path, masks: &[DynamicMask]) -> Result<()> {
    Ok(fs::write(path, MaskTensor::from_masks(masks)?.encode())?)
}

pub fn read_mask_tensor(path: &Path) -> Result<MaskTensor> {
    MaskTensor::decode(&fs::read(path)?)
}
