//! Moving-object classification, dynamic masks and the static/dynamic split.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_in_rect, Pose};
use crate::grid::{Eogm, GridSpec};
use crate::mass::BeliefMass;
use crate::sensor::LidarScan;
use crate::sim::{Category, TrackedBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    /// m/s
    pub vehicle_speed: f64,
    /// m/s, shared by pedestrians and cyclists.
    pub vru_speed: f64,
    /// Seconds between consecutive frames.
    pub frame_interval: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig { vehicle_speed: 1.4, vru_speed: 0.8, frame_interval: 0.1 }
    }
}

impl ThresholdConfig {
    /// Per-frame centroid displacement above which an object is moving.
    pub fn displacement(&self, category: Category) -> f64 {
        let speed = match category {
            Category::Vehicle => self.vehicle_speed,
            Category::Pedestrian | Category::Cyclist => self.vru_speed,
        };
        speed * self.frame_interval
    }

    pub fn validate(&self) -> Result<()> {
        if self.vehicle_speed > 0.0 && self.vru_speed > 0.0 && self.frame_interval > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("thresholds {self:?}")))
        }
    }
}

/// Displacements within this band of a threshold count as ties. Speed times
/// interval is not exact in binary (`1.4 * 0.1 < 0.14`).
pub const TIE_TOL: f64 = 1e-9;

/// Ids whose centroid moved strictly more than their category threshold
/// between `prev` and `cur`. Objects missing from either frame are not moving.
pub fn classify_moving(prev: &[TrackedBox], cur: &[TrackedBox], cfg: &ThresholdConfig) -> Result<BTreeSet<u32>> {
    cfg.validate()?;
    let index = |boxes: &[TrackedBox]| -> Result<HashMap<u32, (f64, f64)>> {
        let mut m = HashMap::with_capacity(boxes.len());
        for b in boxes {
            if m.insert(b.track_id, (b.x, b.y)).is_some() {
                return Err(Error::DuplicateTrack(b.track_id));
            }
        }
        Ok(m)
    };
    let before = index(prev)?;
    index(cur)?;
    let mut moving = BTreeSet::new();
    for b in cur {
        if let Some(&(px, py)) = before.get(&b.track_id) {
            let d = (b.x - px).hypot(b.y - py);
            if d > cfg.displacement(b.category) + TIE_TOL {
                moving.insert(b.track_id);
            }
        }
    }
    Ok(moving)
}

/// Binary grid marking cells that belong to moving objects.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicMask {
    pub spec: GridSpec,
    pub cells: Vec<u8>,
}

impl DynamicMask {
    pub fn zeros(spec: GridSpec) -> Self {
        DynamicMask { spec, cells: vec![0; spec.len()] }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[self.spec.index(row, col)] != 0
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize) {
        let i = self.spec.index(row, col);
        self.cells[i] = 1;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Cells hit by scan returns that fall inside a moving box.
    #[default]
    ScanPoints,
    /// Every cell whose center lies in a moving box footprint. Diagnostics only.
    BoxFootprint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaskOptions {
    #[serde(default)]
    pub mode: MaskMode,
    /// Chebyshev dilation radius in cells applied after rasterization.
    #[serde(default)]
    pub dilation: usize,
}

/// Rasterizes the dynamic mask of one frame in the ego grid.
pub fn rasterize_mask(scan: &LidarScan, ego: &Pose, moving: &[TrackedBox], spec: &GridSpec) -> DynamicMask {
    rasterize_mask_with(scan, ego, moving, spec, &MaskOptions::default())
}

pub fn rasterize_mask_with(
    scan: &LidarScan,
    ego: &Pose,
    moving: &[TrackedBox],
    spec: &GridSpec,
    opts: &MaskOptions,
) -> DynamicMask {
    const BOUNDARY_TOL: f64 = 1e-6;
    let mut mask = DynamicMask::zeros(*spec);
    if moving.is_empty() {
        return mask;
    }
    let inside_any = |w: (f64, f64)| {
        moving.iter().any(|b| point_in_rect(w, b.x, b.y, b.heading, b.length, b.width, BOUNDARY_TOL))
    };
    match opts.mode {
        MaskMode::ScanPoints => {
            for (lx, ly) in scan.points_local() {
                if inside_any(ego.to_world(lx, ly)) {
                    if let Some((r, c)) = spec.cell_of(lx, ly) {
                        mask.set(r, c);
                    }
                }
            }
        }
        MaskMode::BoxFootprint => {
            for r in 0..spec.height {
                for c in 0..spec.width {
                    let (lx, ly) = spec.cell_center(r, c);
                    if inside_any(ego.to_world(lx, ly)) {
                        mask.set(r, c);
                    }
                }
            }
        }
    }
    if opts.dilation > 0 {
        mask = dilate(&mask, opts.dilation);
    }
    mask
}

fn dilate(mask: &DynamicMask, radius: usize) -> DynamicMask {
    let spec = mask.spec;
    let mut out = DynamicMask::zeros(spec);
    for r in 0..spec.height {
        for c in 0..spec.width {
            if !mask.get(r, c) {
                continue;
            }
            for rr in r.saturating_sub(radius)..=(r + radius).min(spec.height - 1) {
                for cc in c.saturating_sub(radius)..=(c + radius).min(spec.width - 1) {
                    out.set(rr, cc);
                }
            }
        }
    }
    out
}

/// Splits a map into `(static, dynamic)` parts by multiplying with `1 - M`
/// and `M`. Zeroed cells are vacuous.
pub fn split_eogm(e: &Eogm, mask: &DynamicMask) -> Result<(Eogm, Eogm)> {
    e.ensure_same_spec(&mask.spec)?;
    let mut stat = Eogm::vacuous(e.spec, e.timestamp);
    let mut dyna = Eogm::vacuous(e.spec, e.timestamp);
    for (i, (&m, &flag)) in e.cells.iter().zip(&mask.cells).enumerate() {
        if flag != 0 {
            dyna.cells[i] = m;
        } else {
            stat.cells[i] = m;
        }
    }
    Ok((stat, dyna))
}

/// Cellwise channel sum of two maps (recomposition of a split).
pub fn recompose(stat: &Eogm, dyna: &Eogm) -> Result<Eogm> {
    stat.ensure_same_spec(&dyna.spec)?;
    let cells = stat
        .cells
        .iter()
        .zip(&dyna.cells)
        .map(|(a, b)| BeliefMass::new(a.m_o + b.m_o, a.m_f + b.m_f))
        .collect();
    Ok(Eogm { spec: stat.spec, cells, timestamp: stat.timestamp })
}
