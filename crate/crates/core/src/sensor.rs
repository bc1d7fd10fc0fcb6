//! Measurement grids from range scans and the recursive egocentric update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, PoseDelta};
use crate::grid::{Eogm, GridSpec};
use crate::mass::{discount_mass, ds_fuse, BeliefMass};

/// One beam of a planar range scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beam {
    /// Radians in the ego frame.
    pub bearing: f64,
    /// Meters, `None` when nothing was hit within `max_range`.
    pub range: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub beams: Vec<Beam>,
    pub max_range: f64,
    /// World pose of the sensor when the scan was taken.
    pub pose: Pose,
}

impl LidarScan {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0) {
            return Err(Error::InvalidConfig(format!("max_range {}", self.max_range)));
        }
        for w in self.beams.windows(2) {
            if !(w[1].bearing > w[0].bearing) {
                return Err(Error::InvalidConfig("scan bearings must be strictly increasing".into()));
            }
        }
        for b in &self.beams {
            if let Some(r) = b.range {
                if !(r > 0.0 && r <= self.max_range) {
                    return Err(Error::InvalidConfig(format!("beam range {r} outside (0, max_range]")));
                }
            }
        }
        Ok(())
    }

    /// Returned points in the ego frame.
    pub fn points_local(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.beams.iter().filter_map(|b| {
            b.range.map(|r| {
                let (s, c) = b.bearing.sin_cos();
                (r * c, r * s)
            })
        })
    }
}

/// Evidence magnitudes and information aging for the measurement model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub beta_occ: f64,
    pub beta_free: f64,
    /// Per-frame discount applied to the previous map.
    pub gamma: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel { beta_occ: 0.75, beta_free: 0.55, gamma: 0.98 }
    }
}

/// Visits every cell a segment passes through, in order, stopping at the end
/// cell or when the segment leaves the grid. Corner crossings visit both
/// side neighbours.
pub fn supercover(
    width: usize,
    height: usize,
    start: (f64, f64),
    end: (f64, f64),
    mut visit: impl FnMut(usize, usize),
) {
    let inside = |c: i64, r: i64| c >= 0 && r >= 0 && (c as usize) < width && (r as usize) < height;
    let (mut cx, mut cy) = (start.0.floor() as i64, start.1.floor() as i64);
    let (ex, ey) = (end.0.floor() as i64, end.1.floor() as i64);
    if !inside(cx, cy) {
        return;
    }
    visit(cy as usize, cx as usize);

    let (dx, dy) = (end.0 - start.0, end.1 - start.1);
    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    let (delta_x, delta_y) = (
        if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY },
        if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY },
    );
    let mut t_max_x = if dx > 0.0 {
        (cx as f64 + 1.0 - start.0) / dx
    } else if dx < 0.0 {
        (start.0 - cx as f64) / -dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        (cy as f64 + 1.0 - start.1) / dy
    } else if dy < 0.0 {
        (start.1 - cy as f64) / -dy
    } else {
        f64::INFINITY
    };

    const TIE: f64 = 1e-12;
    const END: f64 = 1.0 + 1e-9;
    while (cx, cy) != (ex, ey) {
        let t = t_max_x.min(t_max_y);
        if t > END {
            break;
        }
        if (t_max_x - t_max_y).abs() <= TIE {
            for (c, r) in [(cx + step_x, cy), (cx, cy + step_y)] {
                if inside(c, r) {
                    visit(r as usize, c as usize);
                }
            }
            cx += step_x;
            cy += step_y;
            t_max_x += delta_x;
            t_max_y += delta_y;
        } else if t_max_x < t_max_y {
            cx += step_x;
            t_max_x += delta_x;
        } else {
            cy += step_y;
            t_max_y += delta_y;
        }
        if !inside(cx, cy) {
            return;
        }
        visit(cy as usize, cx as usize);
    }
}

/// Measurement eOGM for a single scan in its own ego frame.
///
/// Each cell records whether any beam passed through it (free evidence) and
/// whether any beam ended in it (occupied evidence). Each kind counts once
/// per scan; a cell carrying both gets their Dempster combination.
pub fn inverse_sensor_model(scan: &LidarScan, spec: &GridSpec, model: &SensorModel) -> Eogm {
    const FREE: u8 = 1;
    const OCC: u8 = 2;
    let mut flags = vec![0u8; spec.len()];
    let start = spec.to_grid_coords(0.0, 0.0);
    for beam in &scan.beams {
        let (s, c) = beam.bearing.sin_cos();
        let reach = beam.range.unwrap_or(scan.max_range);
        let end = spec.to_grid_coords(reach * c, reach * s);
        let end_cell = (end.1.floor() as i64, end.0.floor() as i64);
        supercover(spec.width, spec.height, start, end, |r, col| {
            let is_end = (r as i64, col as i64) == end_cell;
            flags[spec.index(r, col)] |= if is_end && beam.range.is_some() { OCC } else { FREE };
        });
    }

    let occ = BeliefMass::new(model.beta_occ, 0.0);
    let free = BeliefMass::new(0.0, model.beta_free);
    let both = ds_fuse(occ, free).unwrap_or(occ);
    let cells = flags
        .into_iter()
        .map(|f| match f {
            FREE => free,
            OCC => occ,
            3 => both,
            _ => BeliefMass::VACUOUS,
        })
        .collect();
    Eogm { spec: *spec, cells, timestamp: 0.0 }
}

/// Re-registers a grid into the ego frame reached after `delta`.
///
/// Nearest-neighbour resampling: every new cell takes the value of the old
/// cell containing its center's preimage; preimages off the old grid are
/// vacuous.
pub fn ego_transform(e: &Eogm, delta: &PoseDelta) -> Eogm {
    if delta.dx == 0.0 && delta.dy == 0.0 && delta.dtheta == 0.0 {
        return e.clone();
    }
    let spec = e.spec;
    let moved = Pose::new(delta.dx, delta.dy, delta.dtheta);
    let mut out = Eogm::vacuous(spec, e.timestamp);
    for row in 0..spec.height {
        for col in 0..spec.width {
            let (x, y) = spec.cell_center(row, col);
            let (ox, oy) = moved.to_world(x, y);
            if let Some((r, c)) = spec.cell_of(ox, oy) {
                out.cells[spec.index(row, col)] = e.cells[spec.index(r, c)];
            }
        }
    }
    out
}

/// One step of the recursive map: re-register, discount, then fuse with the
/// new measurement. Cells in total conflict take the measurement.
pub fn temporal_update(prev: &Eogm, delta: &PoseDelta, meas: &Eogm, gamma: f64) -> Result<Eogm> {
    prev.ensure_same_spec(&meas.spec)?;
    let moved = ego_transform(prev, delta);
    let cells = moved
        .cells
        .iter()
        .zip(&meas.cells)
        .map(|(&p, &z)| ds_fuse(discount_mass(p, gamma), z).unwrap_or(z))
        .collect();
    Ok(Eogm { spec: meas.spec, cells, timestamp: meas.timestamp })
}
