use dprong_nn::{fuse_predictions, persistence, predict, DoubleProngModel, FusionMode, InputWindow, ModelConfig, Shape, Tensor};
use proptest::prelude::*;

mod common;
use common::sample;

fn window(side: usize, frames: usize, seed: u64) -> InputWindow {
    let s = sample(side, frames, seed);
    InputWindow { full: s.full, stat: s.stat, dynamic: s.dynamic }
}

fn is_simplex(t: &Tensor) -> bool {
    let p = t.shape.plane();
    t.shape.channels == 2 && (0..p).all(|i| {
        let (o, f) = (t.data[i], t.data[p + i]);
        o >= -1e-12 && f >= -1e-12 && o + f <= 1.0 + 1e-9
    })
}

#[test]
fn double_prong_prediction_contract() {
    let m = DoubleProngModel::new(ModelConfig::tiny(), 9).unwrap();
    let w = window(8, 4, 1);
    let p = predict(&m, &w, 6).unwrap();
    assert_eq!(p.full.len(), 6);
    assert_eq!(p.static_pred.len(), 6);
    assert_eq!(p.dynamic_pred.len(), 6);
    assert!(p.full.iter().chain(&p.static_pred).chain(&p.dynamic_pred).all(is_simplex));
    assert_eq!(p.persistence, vec![w.full[3].clone(); 6]);
    assert_eq!(p.full, fuse_predictions(&p.static_pred, &p.dynamic_pred, FusionMode::Eval).unwrap());
}

#[test]
fn single_prong_reads_full_maps() {
    let m = DoubleProngModel::new(ModelConfig::tiny().single(), 9).unwrap();
    let mut w = window(8, 4, 2);
    let a = predict(&m, &w, 3).unwrap();
    assert!(a.static_pred.is_empty() && a.dynamic_pred.is_empty());
    // The split streams are ignored.
    w.stat.clear();
    w.dynamic.clear();
    assert_eq!(predict(&m, &w, 3).unwrap().full, a.full);
}

#[test]
fn prediction_rejects_bad_windows() {
    let m = DoubleProngModel::new(ModelConfig::tiny(), 9).unwrap();
    let mut w = window(8, 4, 3);
    w.dynamic.pop();
    assert!(predict(&m, &w, 2).is_err());
    let empty = InputWindow { full: vec![], stat: vec![], dynamic: vec![] };
    assert!(predict(&m, &empty, 2).is_err());
    // The deepest layer needs sides divisible by 4.
    assert!(predict(&m, &window(6, 3, 4), 2).is_err());
}

#[test]
fn persistence_repeats_the_last_frame() {
    let last = window(4, 2, 5).full[1].clone();
    let p = persistence(&last, 4);
    assert_eq!(p.len(), 4);
    assert!(p.iter().all(|t| *t == last));
}

fn mass_map(side: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), side * side).prop_map(move |cells| {
        let s = Shape::new(2, side, side);
        let p = s.plane();
        let mut t = Tensor::zeros(s);
        for (i, (a, b)) in cells.into_iter().enumerate() {
            t.data[i] = a;
            t.data[p + i] = (1.0 - a) * b;
        }
        t
    })
}

proptest! {
    #[test]
    fn vacuous_dynamic_leaves_static_unchanged(stat in mass_map(4)) {
        let vacuous = Tensor::zeros(stat.shape);
        let fused = fuse_predictions(&[stat.clone()], &[vacuous], FusionMode::Eval).unwrap();
        for (a, b) in fused[0].data.iter().zip(&stat.data) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn eval_fusion_stays_on_the_simplex(a in mass_map(3), b in mass_map(3)) {
        let fused = fuse_predictions(&[a], &[b], FusionMode::Eval).unwrap();
        prop_assert!(is_simplex(&fused[0]));
    }

    #[test]
    fn fusion_is_symmetric_in_the_prongs(a in mass_map(3), b in mass_map(3)) {
        for mode in [FusionMode::Eval, FusionMode::Training] {
            let ab = fuse_predictions(&[a.clone()], &[b.clone()], mode).unwrap();
            let ba = fuse_predictions(&[b.clone()], &[a.clone()], mode).unwrap();
            for (x, y) in ab[0].data.iter().zip(&ba[0].data) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn model_outputs_stay_on_the_simplex(seed in 0u64..1000) {
        let m = DoubleProngModel::new(ModelConfig::tiny(), seed).unwrap();
        let p = predict(&m, &window(4, 2, seed), 3).unwrap();
        prop_assert!(p.full.iter().chain(&p.static_pred).chain(&p.dynamic_pred).all(is_simplex));
    }
}
