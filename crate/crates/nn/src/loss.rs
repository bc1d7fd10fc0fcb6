//! Prong fusion and the training objective.
//!
//! The objective is `L = L_d + α·L_f`. Per step and per channel `(O, F)`,
//! `L_f` is the spatial mean of `|m − m̂|` over the fused full map and `L_d`
//! the spatial sum of `|M_d·m − m̂_d|` over the dynamic prong's output; both
//! are then averaged over the two channels and the predicted steps.

use dprong_core::{ds_fuse, ds_fuse_unnormalized, BeliefMass};

use crate::error::{shape, Result};
use crate::model::MASS_CHANNELS;
use crate::tape::{Tape, Var};
use crate::tensor::{ensure_same, Tensor};

/// How prong outputs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// Unnormalized combination; the conflict mass is dropped.
    Training,
    /// Normalized combination; on total conflict the dynamic prong wins.
    Eval,
}

/// Cellwise fusion of static and dynamic predictions.
///
/// `Eval` yields `(m_o, m_f)` maps. `Training` yields three channels
/// `(u_o, u_f, u_of)`, since the occluded numerator is not implied by the
/// other two once conflict is dropped.
pub fn fuse_predictions(static_pred: &[Tensor], dynamic_pred: &[Tensor], mode: FusionMode) -> Result<Vec<Tensor>> {
    if static_pred.len() != dynamic_pred.len() {
        return Err(shape(format!("{} static steps vs {} dynamic", static_pred.len(), dynamic_pred.len())));
    }
    static_pred
        .iter()
        .zip(dynamic_pred)
        .map(|(s, d)| {
            ensure_same("fusion", s.shape, d.shape)?;
            if s.shape.channels != MASS_CHANNELS {
                return Err(shape(format!("fusion takes {MASS_CHANNELS} channels, got {}", s.shape.channels)));
            }
            let p = s.shape.plane();
            let channels = if mode == FusionMode::Training { 3 } else { 2 };
            let mut out = Tensor::zeros(s.shape.with_channels(channels));
            for i in 0..p {
                let a = BeliefMass::new(s.data[i], s.data[p + i]);
                let b = BeliefMass::new(d.data[i], d.data[p + i]);
                match mode {
                    FusionMode::Training => {
                        let u = ds_fuse_unnormalized(a, b);
                        out.data[i] = u.u_o;
                        out.data[p + i] = u.u_f;
                        out.data[2 * p + i] = u.u_of;
                    }
                    FusionMode::Eval => {
                        let m = ds_fuse(a, b).unwrap_or(b);
                        out.data[i] = m.m_o;
                        out.data[p + i] = m.m_f;
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

/// Both terms of the objective and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub full: f64,
    pub dynamic: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(full: f64, dynamic: f64, alpha: f64) -> Self {
        LossBreakdown { full, dynamic, total: dynamic + alpha * full }
    }
}

/// Plain-tensor evaluation of the objective.
///
/// All sequences carry one tensor per predicted step; predictions and targets
/// have at least the `(m_o, m_f)` channels, masks one channel of 0/1 weights.
pub fn loss_total(
    full_pred: &[Tensor],
    full_target: &[Tensor],
    dyn_pred: &[Tensor],
    masks: &[Tensor],
    alpha: f64,
) -> Result<LossBreakdown> {
    let steps = full_pred.len();
    if steps == 0 || [full_target.len(), dyn_pred.len(), masks.len()].iter().any(|&n| n != steps) {
        return Err(shape("loss sequences must be non-empty and equally long"));
    }
    let (mut full, mut dynamic) = (0.0, 0.0);
    for t in 0..steps {
        let s = full_target[t].shape;
        let plane = s.plane();
        for (what, x) in [("full prediction", &full_pred[t]), ("dynamic prediction", &dyn_pred[t])] {
            if x.shape.channels < MASS_CHANNELS || (x.shape.height, x.shape.width) != (s.height, s.width) {
                return Err(shape(format!("{what} {:?} vs target {s:?}", x.shape)));
            }
        }
        ensure_same("mask", masks[t].shape, s.with_channels(1))?;
        for c in 0..MASS_CHANNELS {
            let (m, mf, md) = (full_target[t].channel(c), full_pred[t].channel(c), dyn_pred[t].channel(c));
            let abs_full: f64 = m.iter().zip(mf).map(|(a, b)| (a - b).abs()).sum();
            let abs_dyn: f64 = m.iter().zip(md).zip(masks[t].channel(0)).map(|((a, b), w)| (w * a - b).abs()).sum();
            full += abs_full / plane as f64;
            dynamic += abs_dyn;
        }
    }
    let norm = (MASS_CHANNELS * steps) as f64;
    Ok(LossBreakdown::new(full / norm, dynamic / norm, alpha))
}

/// One step's targets as flat `(m_o, m_f)` vectors.
#[derive(Debug, Clone)]
pub(crate) struct StepTarget {
    pub full: Vec<f64>,
    pub masked: Vec<f64>,
}

impl StepTarget {
    pub fn new(full: &Tensor, mask: &Tensor) -> Self {
        let p = full.shape.plane();
        let full_v = full.data[..MASS_CHANNELS * p].to_vec();
        let masked = full_v.iter().enumerate().map(|(i, v)| mask.data[i % p] * v).collect();
        StepTarget { full: full_v, masked }
    }
}

/// Tape route of [`loss_total`]: returns `(L_d, L_f, L)` scalars.
pub(crate) fn loss_on_tape(
    tape: &mut Tape,
    full_pred: &[Var],
    dyn_pred: Option<&[Var]>,
    targets: &[StepTarget],
    alpha: f64,
) -> (Option<Var>, Var, Var) {
    let steps = targets.len();
    assert_eq!(full_pred.len(), steps);
    let plane = tape.shape(full_pred[0]).plane();
    let norm = (MASS_CHANNELS * steps) as f64;
    let full_terms: Vec<Var> =
        full_pred.iter().zip(targets).map(|(&p, t)| tape.l1(p, &t.full, 1.0 / (norm * plane as f64))).collect();
    let full = tape.sum(&full_terms);
    let dynamic = dyn_pred.map(|d| {
        let terms: Vec<Var> = d.iter().zip(targets).map(|(&p, t)| tape.l1(p, &t.masked, 1.0 / norm)).collect();
        tape.sum(&terms)
    });
    // α·L_f as an L1 node keeps the weighting exact and visible to backward.
    let weighted: Vec<Var> = full_pred
        .iter()
        .zip(targets)
        .map(|(&p, t)| tape.l1(p, &t.full, alpha / (norm * plane as f64)))
        .chain(dynamic)
        .collect();
    let total = tape.sum(&weighted);
    (dynamic, full, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn cell(o: f64, f: f64) -> Tensor {
        Tensor::from_vec(Shape::new(2, 1, 1), vec![o, f]).unwrap()
    }

    fn mask(v: f64) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, 1), vec![v]).unwrap()
    }

    #[test]
    fn worked_single_cell_example() {
        let l = loss_total(&[cell(0.6, 0.2)], &[cell(0.8, 0.1)], &[cell(0.7, 0.05)], &[mask(1.0)], 10.0).unwrap();
        assert!((l.full - 0.15).abs() < 1e-12);
        assert!((l.dynamic - 0.075).abs() < 1e-12);
        assert!((l.total - 1.575).abs() < 1e-12);
    }

    #[test]
    fn alpha_zero_is_dynamic_term() {
        let l = loss_total(&[cell(0.6, 0.2)], &[cell(0.8, 0.1)], &[cell(0.7, 0.05)], &[mask(1.0)], 0.0).unwrap();
        assert_eq!(l.total, l.dynamic);
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let t = cell(0.3, 0.4);
        let l = loss_total(&[t.clone()], &[t.clone()], &[t.clone()], &[mask(1.0)], 10.0).unwrap();
        assert_eq!(l.total, 0.0);
        // Outside the mask the dynamic target is vacuous.
        let l = loss_total(&[t.clone()], &[t], &[cell(0.0, 0.0)], &[mask(0.0)], 10.0).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn loss_rejects_mismatch() {
        assert!(loss_total(&[], &[], &[], &[], 1.0).is_err());
        assert!(loss_total(&[cell(0.1, 0.1)], &[cell(0.1, 0.1)], &[], &[mask(1.0)], 1.0).is_err());
        let big = Tensor::zeros(Shape::new(2, 2, 2));
        assert!(loss_total(&[big], &[cell(0.1, 0.1)], &[cell(0.1, 0.1)], &[mask(1.0)], 1.0).is_err());
    }

    #[test]
    fn fusion_examples() {
        let s = [cell(0.6, 0.2)];
        let d = [cell(0.5, 0.3)];
        let e = fuse_predictions(&s, &d, FusionMode::Eval).unwrap();
        assert!((e[0].data[0] - 0.52 / 0.72).abs() < 1e-12);
        assert!((e[0].data[1] - 0.16 / 0.72).abs() < 1e-12);
        let u = fuse_predictions(&s, &d, FusionMode::Training).unwrap();
        assert_eq!(u[0].shape.channels, 3);
        for (got, want) in u[0].data.iter().zip([0.52, 0.16, 0.04]) {
            assert!((got - want).abs() < 1e-12);
        }
        let v = fuse_predictions(&[cell(0.0, 0.0)], &[cell(0.8, 0.1)], FusionMode::Eval).unwrap();
        assert_eq!(v[0].data, vec![0.8, 0.1]);
    }

    #[test]
    fn eval_fusion_total_conflict_takes_dynamic() {
        let v = fuse_predictions(&[cell(0.0, 1.0)], &[cell(1.0, 0.0)], FusionMode::Eval).unwrap();
        assert_eq!(v[0].data, vec![1.0, 0.0]);
    }

    #[test]
    fn fusion_rejects_mismatch() {
        assert!(fuse_predictions(&[cell(0.1, 0.1)], &[], FusionMode::Eval).is_err());
        let big = Tensor::zeros(Shape::new(2, 2, 2));
        assert!(fuse_predictions(&[cell(0.1, 0.1)], &[big], FusionMode::Eval).is_err());
    }

    #[test]
    fn tape_route_matches_plain_route() {
        let preds = [cell(0.6, 0.2), cell(0.1, 0.7)];
        let dyns = [cell(0.7, 0.05), cell(0.2, 0.2)];
        let targets = [cell(0.8, 0.1), cell(0.0, 0.9)];
        let masks = [mask(1.0), mask(0.0)];
        for alpha in [0.0, 1.0, 10.0] {
            let plain = loss_total(&preds, &targets, &dyns, &masks, alpha).unwrap();
            let mut tape = Tape::new();
            let p: Vec<Var> = preds.iter().map(|t| tape.leaf(t.shape, t.data.clone())).collect();
            let d: Vec<Var> = dyns.iter().map(|t| tape.leaf(t.shape, t.data.clone())).collect();
            let st: Vec<StepTarget> = targets.iter().zip(&masks).map(|(t, m)| StepTarget::new(t, m)).collect();
            let (ld, lf, l) = loss_on_tape(&mut tape, &p, Some(&d), &st, alpha);
            assert!((tape.scalar(ld.unwrap()) - plain.dynamic).abs() < 1e-15);
            assert!((tape.scalar(lf) - plain.full).abs() < 1e-15);
            assert!((tape.scalar(l) - plain.total).abs() < 1e-14);
        }
    }
}
