//! Egocentric grid containers.
//!
//! Cells are addressed `(row, col)`. Columns run along the ego +x axis
//! (forward) and rows run against +y, so row 0 is the leftmost strip. The ego
//! origin sits at the corner shared by the four central cells
//! (`x = 0` at column `width / 2`, `y = 0` at row `height / 2`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mass::{pignistic, BeliefMass};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Meters per cell.
    pub resolution: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { width: 32, height: 32, resolution: 1.0 }
    }
}

impl GridSpec {
    /// Full-scale geometry: 128 × 128 cells at 0.33 m.
    pub const FULL_SCALE: GridSpec = GridSpec { width: 128, height: 128, resolution: 0.33 };

    pub fn new(width: usize, height: usize, resolution: f64) -> Result<Self> {
        let spec = GridSpec { width, height, resolution };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "grid {}x{} at {} m/cell",
                self.width, self.height, self.resolution
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// Continuous grid coordinates `(gx, gy)` of an ego-frame point, where
    /// `floor(gx)` is the column and `floor(gy)` the row.
    #[inline]
    pub fn to_grid_coords(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x / self.resolution + self.width as f64 / 2.0,
            self.height as f64 / 2.0 - y / self.resolution,
        )
    }

    /// Cell containing an ego-frame point, if it lies on the grid.
    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (gx, gy) = self.to_grid_coords(x, y);
        let (col, row) = (gx.floor(), gy.floor());
        if col >= 0.0 && row >= 0.0 && (col as usize) < self.width && (row as usize) < self.height {
            Some((row as usize, col as usize))
        } else {
            None
        }
    }

    /// Ego-frame coordinates of a cell center.
    #[inline]
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5 - self.width as f64 / 2.0) * self.resolution,
            (self.height as f64 / 2.0 - row as f64 - 0.5) * self.resolution,
        )
    }
}

/// Evidential occupancy grid map.
#[derive(Debug, Clone, PartialEq)]
pub struct Eogm {
    pub spec: GridSpec,
    pub cells: Vec<BeliefMass>,
    /// Seconds.
    pub timestamp: f64,
}

impl Eogm {
    /// Fully occluded map.
    pub fn vacuous(spec: GridSpec, timestamp: f64) -> Self {
        Eogm { spec, cells: vec![BeliefMass::VACUOUS; spec.len()], timestamp }
    }

    pub fn from_cells(spec: GridSpec, cells: Vec<BeliefMass>, timestamp: f64) -> Result<Self> {
        if cells.len() != spec.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} cells for a {}x{} grid",
                cells.len(),
                spec.width,
                spec.height
            )));
        }
        Ok(Eogm { spec, cells, timestamp })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> BeliefMass {
        self.cells[self.spec.index(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, m: BeliefMass) {
        let i = self.spec.index(row, col);
        self.cells[i] = m;
    }

    pub fn is_valid(&self) -> bool {
        self.cells.iter().all(BeliefMass::is_valid)
    }

    pub fn ensure_same_spec(&self, other: &GridSpec) -> Result<()> {
        if self.spec != *other {
            return Err(Error::SpecMismatch(format!("{:?} vs {:?}", self.spec, other)));
        }
        Ok(())
    }

    /// Pignistic transform of every cell.
    pub fn to_ogm(&self) -> Ogm {
        Ogm {
            spec: self.spec,
            cells: self.cells.iter().map(|&m| pignistic(m)).collect(),
            timestamp: self.timestamp,
        }
    }
}

pub fn to_ogm(e: &Eogm) -> Ogm {
    e.to_ogm()
}

/// Occupancy probabilities `p(O)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ogm {
    pub spec: GridSpec,
    pub cells: Vec<f64>,
    pub timestamp: f64,
}

impl Ogm {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[self.spec.index(row, col)]
    }
}
