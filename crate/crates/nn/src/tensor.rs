//! Dense channel-major feature maps and their bridge to eOGMs.

use dprong_core::{BeliefMass, DynamicMask, Eogm, GridSpec};

use crate::error::{shape, Result};

/// `[channels, height, width]`, row-major within a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape { channels, height, width }
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn with_channels(&self, channels: usize) -> Self {
        Shape { channels, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![0.0; shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(shape_err(shape, data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.shape.plane();
        &self.data[c * p..(c + 1) * p]
    }

    /// Two channels `(m_o, m_f)`.
    pub fn from_eogm(e: &Eogm) -> Self {
        let n = e.spec.len();
        let mut data = vec![0.0; 2 * n];
        for (i, m) in e.cells.iter().enumerate() {
            data[i] = m.m_o;
            data[n + i] = m.m_f;
        }
        Tensor { shape: Shape::new(2, e.spec.height, e.spec.width), data }
    }

    /// One channel of 0/1 weights.
    pub fn from_mask(mask: &DynamicMask) -> Self {
        let data = mask.cells.iter().map(|&b| f64::from(b)).collect();
        Tensor { shape: Shape::new(1, mask.spec.height, mask.spec.width), data }
    }

    /// Reads channels 0 and 1 as `(m_o, m_f)`; validated by [`Eogm::from_cells`].
    pub fn to_eogm(&self, resolution: f64, timestamp: f64) -> Result<Eogm> {
        if self.shape.channels < 2 {
            return Err(shape(format!("eOGM needs 2 channels, got {}", self.shape.channels)));
        }
        let spec = GridSpec::new(self.shape.width, self.shape.height, resolution)?;
        let (o, f) = (self.channel(0), self.channel(1));
        let cells = o.iter().zip(f).map(|(&m_o, &m_f)| BeliefMass::new(m_o, m_f)).collect();
        Ok(Eogm::from_cells(spec, cells, timestamp)?)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn shape_err(s: Shape, got: usize) -> crate::error::Error {
    shape(format!("{s:?} needs {} values, got {got}", s.len()))
}

pub(crate) fn ensure_same(what: &str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}
