//! eOGM frames as binary PPM images.
//!
//! Each cell blends three colors weighted by its masses: occupied, free and
//! unknown (`m_of`). Row 0 of the grid is the top image row.

use std::fs;
use std::path::{Path, PathBuf};

use dprong_core::format::EogmTensor;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Palette {
    pub occupied: [u8; 3],
    pub free: [u8; 3],
    pub unknown: [u8; 3],
}

impl Default for Palette {
    fn default() -> Self {
        Palette { occupied: [255, 0, 0], free: [0, 0, 255], unknown: [0, 255, 0] }
    }
}

/// Rounds half up and saturates to a byte.
fn to_byte(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

impl Palette {
    pub fn color(&self, m_o: f64, m_f: f64) -> [u8; 3] {
        let m_of = (1.0 - m_o - m_f).max(0.0);
        let mut rgb = [0u8; 3];
        for (k, out) in rgb.iter_mut().enumerate() {
            let v = m_o * f64::from(self.occupied[k]) + m_f * f64::from(self.free[k]) + m_of * f64::from(self.unknown[k]);
            *out = to_byte(v);
        }
        rgb
    }
}

/// One frame of a raw tensor as a P6 image.
pub fn frame_ppm(t: &EogmTensor, frame: usize, palette: &Palette) -> Result<Vec<u8>> {
    if frame >= t.frames {
        return Err(CliError::Usage(format!("frame {frame} out of range (tensor has {})", t.frames)));
    }
    let header = format!("P6\n{} {}\n255\n", t.width, t.height);
    let mut out = Vec::with_capacity(header.len() + 3 * t.width * t.height);
    out.extend_from_slice(header.as_bytes());
    for cell in t.frame(frame).chunks_exact(2) {
        out.extend_from_slice(&palette.color(f64::from(cell[0]), f64::from(cell[1])));
    }
    Ok(out)
}

/// Writes `frame_NNN.ppm` for the chosen frame, or for all frames.
pub fn render_file(input: &Path, out_dir: &Path, frame: Option<usize>, palette: &Palette) -> Result<Vec<PathBuf>> {
    if !input.is_file() {
        return Err(CliError::MissingInput { path: input.to_path_buf(), hint: "expected an .eogm file" });
    }
    let t = EogmTensor::decode(&fs::read(input).at(input)?)?;
    fs::create_dir_all(out_dir).at(out_dir)?;
    let frames: Vec<usize> = match frame {
        Some(f) => vec![f],
        None => (0..t.frames).collect(),
    };
    let mut written = Vec::with_capacity(frames.len());
    for f in frames {
        let path = out_dir.join(format!("frame_{f:03}.ppm"));
        fs::write(&path, frame_ppm(&t, f, palette)?).at(&path)?;
        written.push(path);
    }
    Ok(written)
}
