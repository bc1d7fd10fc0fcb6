//! Simulated scenes through the sensor model, masking and file formats.

use dprong_core::format::{decode_scans, encode_scans, read_sequence, write_eogms, write_masks, write_sequence, EogmTensor, MaskTensor};
use dprong_core::masking::recompose;
use dprong_core::sim::Scenario;
use dprong_core::{
    classify_moving, inverse_sensor_model, rasterize_mask, simulate, split_eogm, temporal_update, DynamicMask, Eogm, GridSpec,
    PoseDelta, SensorModel, ThresholdConfig,
};

/// Fused maps and masks for every frame of one generated scene.
fn fuse(scenario: Scenario, seed: u64, spec: GridSpec) -> (Vec<Eogm>, Vec<DynamicMask>) {
    let seq = simulate(&scenario.generate(seed, 2.0)).unwrap();
    let model = SensorModel::default();
    let th = ThresholdConfig::default();
    let (mut maps, mut masks) = (Vec::new(), Vec::new());
    let mut map = Eogm::vacuous(spec, 0.0);
    for (t, f) in seq.frames.iter().enumerate() {
        let meas = inverse_sensor_model(&f.scan, &spec, &model);
        map = if t == 0 {
            meas
        } else {
            temporal_update(&map, &PoseDelta::between(&seq.frames[t - 1].ego, &f.ego), &meas, model.gamma).unwrap()
        };
        let moving = if t == 0 { Default::default() } else { classify_moving(&seq.frames[t - 1].boxes, &f.boxes, &th).unwrap() };
        let movers: Vec<_> = f.boxes.iter().filter(|b| moving.contains(&b.track_id)).cloned().collect();
        masks.push(rasterize_mask(&f.scan, &f.ego, &movers, &spec));
        maps.push(map.clone());
    }
    (maps, masks)
}

#[test]
fn fused_maps_stay_valid_and_split_exactly() {
    let spec = GridSpec::new(32, 32, 1.0).unwrap();
    let mut masked = 0;
    for scenario in Scenario::ALL {
        for seed in 0..4 {
            let (maps, masks) = fuse(scenario, seed, spec);
            for (e, m) in maps.iter().zip(&masks) {
                assert!(e.is_valid());
                let (s, d) = split_eogm(e, m).unwrap();
                assert_eq!(recompose(&s, &d).unwrap().cells, e.cells);
                for (((sc, dc), &flag), full) in s.cells.iter().zip(&d.cells).zip(&m.cells).zip(&e.cells) {
                    let (kept, zeroed) = if flag != 0 { (dc, sc) } else { (sc, dc) };
                    assert_eq!(kept, full);
                    assert!(zeroed.is_vacuous());
                }
                masked += m.count();
            }
        }
    }
    assert!(masked > 0);
}

#[test]
fn evidence_accumulates_over_time() {
    let spec = GridSpec::new(32, 32, 1.0).unwrap();
    let (maps, _) = fuse(Scenario::Clutter, 3, spec);
    let informed = |e: &Eogm| e.cells.iter().filter(|c| !c.is_vacuous()).count();
    assert!(informed(maps.last().unwrap()) >= informed(&maps[0]));
}

#[test]
fn generated_files_round_trip() {
    let spec = GridSpec::new(16, 16, 2.0).unwrap();
    let (maps, masks) = fuse(Scenario::StraightPass, 1, spec);
    let dir = tempfile::tempdir().unwrap();
    let (ep, mp) = (dir.path().join("a.eogm"), dir.path().join("a.mask"));
    write_eogms(&ep, &maps).unwrap();
    write_masks(&mp, &masks).unwrap();

    let ebytes = std::fs::read(&ep).unwrap();
    let t = EogmTensor::decode(&ebytes).unwrap();
    assert_eq!(t.encode(), ebytes);
    let back = t.to_maps(spec.resolution, 0.1).unwrap();
    for (a, b) in back.iter().zip(&maps) {
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!(x.m_o, f64::from(y.m_o as f32));
            assert_eq!(x.m_f, f64::from(y.m_f as f32));
        }
    }
    let mbytes = std::fs::read(&mp).unwrap();
    assert_eq!(MaskTensor::decode(&mbytes).unwrap().to_masks(spec.resolution).unwrap(), masks);
    for cut in 0..ebytes.len().min(64) {
        assert!(EogmTensor::decode(&ebytes[..cut]).is_err());
    }
    assert!(EogmTensor::decode(&ebytes[..ebytes.len() - 1]).is_err());
    assert!(MaskTensor::decode(&mbytes[..mbytes.len() - 1]).is_err());

    let seq = simulate(&Scenario::Intersection.generate(9, 1.0)).unwrap();
    write_sequence(dir.path(), &seq).unwrap();
    let again = read_sequence(dir.path()).unwrap();
    assert_eq!(again.frames.len(), seq.frames.len());
    let scans: Vec<_> = again.frames.iter().map(|f| f.scan.clone()).collect();
    // Poses live in the ego table, not the scan file.
    for (a, b) in decode_scans(&encode_scans(&scans).unwrap()).unwrap().iter().zip(&scans) {
        assert_eq!((&a.beams, a.max_range), (&b.beams, b.max_range));
    }
}
