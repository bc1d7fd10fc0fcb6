use std::fs;
use std::path::Path;
use std::process::Command;

use dprong_cli::config::{ModelSettings, SimulateSettings, TrainSettings};
use dprong_cli::dataset::{build_dataset, build_sequence, BuildOptions, Dataset, Split};
use dprong_cli::pipeline::{self, PredictMode};
use dprong_cli::{exit_code, CliError};
use dprong_core::format::{read_sequence, EogmTensor};
use dprong_core::GridSpec;

fn small_build() -> BuildOptions {
    BuildOptions { grid: GridSpec::new(8, 8, 4.0).unwrap(), ..BuildOptions::default() }
}

fn tiny_model() -> ModelSettings {
    ModelSettings {
        static_widths: vec![2, 2],
        static_dilations: vec![1, 1],
        dynamic_widths: vec![2],
        dynamic_dilations: vec![1],
        ..ModelSettings::default()
    }
}

fn tiny_train() -> TrainSettings {
    TrainSettings {
        next_frame_epochs: 1,
        finetune_epochs: 1,
        samples_per_epoch: 2,
        batch_size: 2,
        learning_rate: 1e-3,
        ..TrainSettings::default()
    }
}

fn simulate_and_build(root: &Path, count: usize) -> Dataset {
    pipeline::simulate_scenes(&root.join("seqs"), &SimulateSettings { count, ..SimulateSettings::default() }).unwrap();
    build_dataset(&root.join("seqs"), &root.join("ds"), &small_build()).unwrap();
    Dataset::open(&root.join("ds")).unwrap()
}

#[test]
fn full_pipeline_emits_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let ds = simulate_and_build(root, 8);
    assert_eq!(ds.manifest.sequences.len(), 8);
    assert!(root.join("seqs/seq_00000/scene.toml").is_file());

    let history = pipeline::train_to_dir(&root.join("ds"), &root.join("model"), &tiny_model(), &tiny_train()).unwrap();
    assert_eq!(history.len(), 2);
    for f in [pipeline::CHECKPOINT_FILE, pipeline::NEXT_FRAME_CHECKPOINT_FILE, pipeline::LOSS_HISTORY_FILE] {
        assert!(root.join("model").join(f).is_file(), "{f}");
    }
    let text = fs::read_to_string(root.join("model").join(pipeline::LOSS_HISTORY_FILE)).unwrap();
    assert_eq!(dprong_nn::decode_loss_history(&text).unwrap(), history);

    let ckpt = root.join("model").join(pipeline::CHECKPOINT_FILE);
    for (mode, ck) in [(PredictMode::Double, Some(ckpt.as_path())), (PredictMode::Persist, None)] {
        let out = root.join(format!("pred_{mode:?}"));
        let idx = pipeline::predict_to_dir(&root.join("ds"), ck, &out, mode, Split::Test, 5, 15).unwrap();
        assert_eq!(idx.sequences.len(), ds.manifest.split(Split::Test).count());
        let report = pipeline::evaluate_dir(&root.join("ds"), &out).unwrap();
        assert_eq!(report.steps.len(), 15);
        assert!(report.mean_mse.is_finite() && report.mean_is.is_finite());
        let first = out.join(format!("{}.eogm", idx.sequences[0]));
        let pics = dprong_cli::render::render_file(&first, &root.join("png"), None, &Default::default()).unwrap();
        assert_eq!(pics.len(), 15);
    }
}

#[test]
fn builds_are_deterministic_and_splits_disjoint() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = simulate_and_build(a.path(), 12);
    let db = simulate_and_build(b.path(), 12);
    assert_eq!(da.manifest, db.manifest);
    let counts = Split::ALL.map(|s| da.manifest.split(s).count());
    assert_eq!(counts, [9, 1, 2]);
    let mut names: Vec<_> = da.manifest.sequences.iter().map(|s| s.name.clone()).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), 12);
    for e in &da.manifest.sequences {
        assert_eq!(e.files.len(), 4);
        assert!(e.files.keys().all(|k| k.starts_with(&format!("{}/{}/", e.split.as_str(), e.name))));
    }
}

#[test]
fn kept_window_follows_the_warm_up() {
    let dir = tempfile::tempdir().unwrap();
    let seqs = pipeline::simulate_scenes(dir.path(), &SimulateSettings { count: 3, ..SimulateSettings::default() }).unwrap();
    let mut masked = 0;
    for s in &seqs {
        let seq = read_sequence(s).unwrap();
        assert_eq!(seq.frames.len(), 30);
        let built = build_sequence(&seq, &BuildOptions::default()).unwrap();
        assert_eq!(built.full.len(), 20);
        assert_eq!(built.masks.len(), 20);
        assert!((built.full[0].timestamp - seq.frames[10].timestamp).abs() < 1e-12);
        assert!(built.full.iter().all(|e| e.is_valid()));
        masked += built.masks.iter().map(|m| m.count()).sum::<usize>();
        let short = BuildOptions { warmup: 11, ..BuildOptions::default() };
        assert!(matches!(build_sequence(&seq, &short), Err(CliError::Dataset(_))));
    }
    assert!(masked > 0, "generated scenes should contain moving objects");
}

#[test]
fn tampered_files_are_detected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = simulate_and_build(dir.path(), 3);
    let entry = ds.manifest.sequences[0].clone();
    let path = dir.path().join("ds").join(entry.split.as_str()).join(&entry.name).join("mask.mask");
    let mut bytes = fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&path, bytes).unwrap();
    let err = ds.load_entry(&entry).unwrap_err();
    assert!(matches!(err, CliError::HashMismatch(_)), "{err}");
    assert_eq!(exit_code(&err), 2);
    fs::remove_file(&path).unwrap();
    assert!(matches!(ds.load_entry(&entry), Err(CliError::MissingInput { .. })));
}

#[test]
fn predict_checks_mode_against_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    simulate_and_build(root, 4);
    let single = ModelSettings { mode: dprong_cli::ModelMode::Single, ..tiny_model() };
    pipeline::train_to_dir(&root.join("ds"), &root.join("m"), &single, &tiny_train()).unwrap();
    let ck = root.join("m").join(pipeline::CHECKPOINT_FILE);
    let r = pipeline::predict_to_dir(&root.join("ds"), Some(&ck), &root.join("p"), PredictMode::Double, Split::Train, 5, 15);
    assert!(matches!(r, Err(CliError::Usage(_))));
    pipeline::predict_to_dir(&root.join("ds"), Some(&ck), &root.join("p"), PredictMode::Single, Split::Train, 5, 15).unwrap();
    let no_ck = pipeline::predict_to_dir(&root.join("ds"), None, &root.join("q"), PredictMode::Single, Split::Train, 5, 15);
    assert!(matches!(no_ck, Err(CliError::Usage(_))));
}

#[test]
fn predictions_carry_future_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    let ds = simulate_and_build(dir.path(), 3);
    let seqs = ds.load(Split::Train).unwrap();
    let preds = pipeline::predict_sequences(&seqs, None, PredictMode::Persist, 5, 15).unwrap();
    for (p, s) in preds.iter().zip(&seqs) {
        assert_eq!(p.maps.len(), 15);
        for (i, m) in p.maps.iter().enumerate() {
            assert!((m.timestamp - s.full[5 + i].timestamp).abs() < 1e-9);
            assert_eq!(m.cells, s.full[4].cells);
        }
    }
}

fn dprong(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dprong")).args(args).output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();

    let missing = dprong(&["train", "--dataset", &format!("{d}/nope"), "--out", &format!("{d}/m")]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("dprong build"));

    assert_eq!(dprong(&["train"]).status.code(), Some(1));
    assert_eq!(dprong(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dprong(&["build", "--sequences", d, "--out", d, "--grid", "0x4"]).status.code(), Some(1));
    assert_eq!(dprong(&["--help"]).status.code(), Some(0));

    let cfg = format!("{d}/bad.toml");
    fs::write(&cfg, "[train]\nlearning_rat = 1\n").unwrap();
    assert_eq!(dprong(&["--config", &cfg, "simulate", "--out", d]).status.code(), Some(1));

    let ok = dprong(&["simulate", "--out", &format!("{d}/s"), "--count", "2"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let built = dprong(&["build", "--sequences", &format!("{d}/s"), "--out", &format!("{d}/ds"), "--grid", "8x8@4"]);
    assert!(built.status.success(), "{}", String::from_utf8_lossy(&built.stderr));
    let pred = dprong(&["predict", "--dataset", &format!("{d}/ds"), "--out", &format!("{d}/p"), "--mode", "persist", "--split", "train"]);
    assert!(pred.status.success(), "{}", String::from_utf8_lossy(&pred.stderr));
    let eval = dprong(&["evaluate", "--dataset", &format!("{d}/ds"), "--predictions", &format!("{d}/p"), "--format", "json"]);
    assert!(eval.status.success());
    let report: dprong_core::metrics::HorizonReport = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(report.steps.len(), 15);
    let render = dprong(&["render", "--input", &format!("{d}/p/seq_00000.eogm"), "--out", &format!("{d}/img"), "--frame", "3"]);
    assert!(render.status.success());
    let img = fs::read(format!("{d}/img/frame_003.ppm")).unwrap();
    assert!(img.starts_with(b"P6\n8 8\n255\n"));
    assert_eq!(img.len(), b"P6\n8 8\n255\n".len() + 8 * 8 * 3);
    let t = EogmTensor::decode(&fs::read(format!("{d}/p/seq_00000.eogm")).unwrap()).unwrap();
    assert_eq!(t.frames, 15);
}
