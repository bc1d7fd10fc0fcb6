//! Prediction metrics on occupancy probability maps.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Ogm};
use crate::masking::DynamicMask;

fn check_shapes(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean squared error over all cells.
pub fn mse(pred: &Ogm, target: &Ogm) -> Result<f64> {
    check_shapes(&pred.spec, &target.spec)?;
    let sum: f64 = pred.cells.iter().zip(&target.cells).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.cells.len() as f64)
}

/// Mean squared error over masked cells; `None` when the mask is empty.
pub fn dynamic_mse(pred: &Ogm, target: &Ogm, mask: &DynamicMask) -> Result<Option<f64>> {
    check_shapes(&pred.spec, &target.spec)?;
    check_shapes(&pred.spec, &mask.spec)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for ((p, t), &m) in pred.cells.iter().zip(&target.cells).zip(&mask.cells) {
        if m != 0 {
            sum += (p - t) * (p - t);
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellClass {
    Occupied,
    Free,
    Occluded,
}

impl CellClass {
    pub const ALL: [CellClass; 3] = [CellClass::Occupied, CellClass::Free, CellClass::Occluded];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds {
    /// `p > occupied_above` is occupied.
    pub occupied_above: f64,
    /// `p < free_below` is free.
    pub free_below: f64,
}

impl Default for ClassThresholds {
    fn default() -> Self {
        ClassThresholds { occupied_above: 0.6, free_below: 0.4 }
    }
}

impl ClassThresholds {
    #[inline]
    pub fn classify(&self, p: f64) -> CellClass {
        if p > self.occupied_above {
            CellClass::Occupied
        } else if p < self.free_below {
            CellClass::Free
        } else {
            CellClass::Occluded
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellClassMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<CellClass>,
}

pub fn classify_cells(m: &Ogm, thresholds: &ClassThresholds) -> CellClassMap {
    CellClassMap {
        width: m.spec.width,
        height: m.spec.height,
        labels: m.cells.iter().map(|&p| thresholds.classify(p)).collect(),
    }
}

/// Manhattan distance from every cell to the nearest cell labelled `class`
/// (multi-source breadth-first search). `None` if the class is absent.
fn distance_to_class(map: &CellClassMap, class: CellClass) -> Option<Vec<u32>> {
    let (w, h) = (map.width, map.height);
    let mut dist = vec![u32::MAX; w * h];
    let mut queue = VecDeque::new();
    for (i, &l) in map.labels.iter().enumerate() {
        if l == class {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    if queue.is_empty() {
        return None;
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = (i / w, i % w);
        let d = dist[i] + 1;
        let mut relax = |j: usize| {
            if dist[j] > d {
                dist[j] = d;
                queue.push_back(j);
            }
        };
        if r > 0 {
            relax(i - w);
        }
        if r + 1 < h {
            relax(i + w);
        }
        if c > 0 {
            relax(i - 1);
        }
        if c + 1 < w {
            relax(i + 1);
        }
    }
    Some(dist)
}

/// Image similarity between two class maps; lower is better.
///
/// For each class present in both maps, the mean nearest same-class
/// Manhattan distance from prediction to target and from target to
/// prediction are averaged. Classes present in only one map score
/// `width + height`. The result is the mean over classes present in either.
pub fn image_similarity_classes(pred: &CellClassMap, target: &CellClassMap) -> Result<f64> {
    if pred.width != target.width || pred.height != target.height {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            pred.width, pred.height, target.width, target.height
        )));
    }
    let penalty = (pred.width + pred.height) as f64;
    let mean_dist = |from: &CellClassMap, dist: &[u32], class: CellClass| {
        let (mut s, mut n) = (0u64, 0u64);
        for (l, &d) in from.labels.iter().zip(dist) {
            if *l == class {
                s += d as u64;
                n += 1;
            }
        }
        s as f64 / n as f64
    };
    let (mut total, mut classes) = (0.0, 0usize);
    for class in CellClass::ALL {
        match (distance_to_class(target, class), distance_to_class(pred, class)) {
            (Some(to_target), Some(to_pred)) => {
                total += 0.5 * (mean_dist(pred, &to_target, class) + mean_dist(target, &to_pred, class));
                classes += 1;
            }
            (None, None) => {}
            _ => {
                total += penalty;
                classes += 1;
            }
        }
    }
    Ok(total / classes as f64)
}

pub fn image_similarity(pred: &Ogm, target: &Ogm) -> Result<f64> {
    image_similarity_with(pred, target, &ClassThresholds::default())
}

pub fn image_similarity_with(pred: &Ogm, target: &Ogm, thresholds: &ClassThresholds) -> Result<f64> {
    check_shapes(&pred.spec, &target.spec)?;
    image_similarity_classes(&classify_cells(pred, thresholds), &classify_cells(target, thresholds))
}

/// One evaluated sequence: aligned predicted maps, targets and target masks.
#[derive(Debug, Clone)]
pub struct SequenceEval {
    pub predictions: Vec<Ogm>,
    pub targets: Vec<Ogm>,
    pub masks: Vec<DynamicMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub seconds: f64,
    pub mse: f64,
    pub mse_se: f64,
    /// `None` when no sequence had masked cells at this step.
    pub dyn_mse: Option<f64>,
    pub dyn_mse_se: Option<f64>,
    pub is: f64,
    pub is_se: f64,
    pub count: usize,
    pub dyn_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub steps: Vec<StepStats>,
    pub mean_mse: f64,
    pub mean_mse_se: f64,
    pub mean_dyn_mse: Option<f64>,
    pub mean_dyn_mse_se: Option<f64>,
    pub mean_is: f64,
    pub mean_is_se: f64,
    pub sequences: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of the mean; zero for fewer than two samples.
fn std_err(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

/// Per-step metrics averaged over the set, plus horizon means.
pub fn evaluate_horizon(set: &[SequenceEval], frame_interval: f64) -> Result<HorizonReport> {
    evaluate_horizon_with(set, frame_interval, &ClassThresholds::default())
}

pub fn evaluate_horizon_with(set: &[SequenceEval], frame_interval: f64, thresholds: &ClassThresholds) -> Result<HorizonReport> {
    let first = set.first().ok_or(Error::EmptySet)?;
    let horizon = first.predictions.len();
    if horizon == 0 {
        return Err(Error::EmptySet);
    }
    // per_seq[s][step] = (mse, dyn, is)
    let mut per_seq = Vec::with_capacity(set.len());
    for seq in set {
        if seq.predictions.len() != horizon || seq.targets.len() != horizon || seq.masks.len() != horizon {
            return Err(Error::ShapeMismatch("sequences must share the prediction horizon".into()));
        }
        let mut rows = Vec::with_capacity(horizon);
        for ((p, t), m) in seq.predictions.iter().zip(&seq.targets).zip(&seq.masks) {
            rows.push((mse(p, t)?, dynamic_mse(p, t, m)?, image_similarity_with(p, t, thresholds)?));
        }
        per_seq.push(rows);
    }

    let mut steps = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let m: Vec<f64> = per_seq.iter().map(|r| r[k].0).collect();
        let d: Vec<f64> = per_seq.iter().filter_map(|r| r[k].1).collect();
        let i: Vec<f64> = per_seq.iter().map(|r| r[k].2).collect();
        steps.push(StepStats {
            step: k + 1,
            seconds: (k + 1) as f64 * frame_interval,
            mse: mean(&m),
            mse_se: std_err(&m),
            dyn_mse: (!d.is_empty()).then(|| mean(&d)),
            dyn_mse_se: (!d.is_empty()).then(|| std_err(&d)),
            is: mean(&i),
            is_se: std_err(&i),
            count: m.len(),
            dyn_count: d.len(),
        });
    }

    let seq_mse: Vec<f64> = per_seq.iter().map(|r| mean(&r.iter().map(|x| x.0).collect::<Vec<_>>())).collect();
    let seq_is: Vec<f64> = per_seq.iter().map(|r| mean(&r.iter().map(|x| x.2).collect::<Vec<_>>())).collect();
    let seq_dyn: Vec<f64> = per_seq
        .iter()
        .filter_map(|r| {
            let d: Vec<f64> = r.iter().filter_map(|x| x.1).collect();
            (!d.is_empty()).then(|| mean(&d))
        })
        .collect();
    let step_dyn: Vec<f64> = steps.iter().filter_map(|s| s.dyn_mse).collect();

    Ok(HorizonReport {
        mean_mse: mean(&steps.iter().map(|s| s.mse).collect::<Vec<_>>()),
        mean_mse_se: std_err(&seq_mse),
        mean_dyn_mse: (!step_dyn.is_empty()).then(|| mean(&step_dyn)),
        mean_dyn_mse_se: (!seq_dyn.is_empty()).then(|| std_err(&seq_dyn)),
        mean_is: mean(&steps.iter().map(|s| s.is).collect::<Vec<_>>()),
        mean_is_se: std_err(&seq_is),
        sequences: set.len(),
        steps,
    })
}

impl HorizonReport {
    /// Whitespace-separated table, one row per step, `nan` for missing values.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.9e}"));
        let mut out = String::from("# step seconds mse mse_se dyn_mse dyn_mse_se is is_se count dyn_count\n");
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{} {:.2} {:.9e} {:.9e} {} {} {:.9e} {:.9e} {} {}",
                s.step,
                s.seconds,
                s.mse,
                s.mse_se,
                opt(s.dyn_mse),
                opt(s.dyn_mse_se),
                s.is,
                s.is_se,
                s.count,
                s.dyn_count
            );
        }
        let _ = writeln!(
            out,
            "# mean mse {:.9e} ± {:.3e} | dyn_mse {} ± {} | is {:.9e} ± {:.3e} | sequences {}",
            self.mean_mse,
            self.mean_mse_se,
            opt(self.mean_dyn_mse),
            opt(self.mean_dyn_mse_se),
            self.mean_is,
            self.mean_is_se,
            self.sequences
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
