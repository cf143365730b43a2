//! File round trips: sequences, results, checkpoints and config files.

mod common;

use std::fs;

use common::fixture;
use spintrack::bench::{load_sequence, read_results, write_results, write_sequence};
use spintrack::rsi::{checkpoint, RsiRegressor};
use spintrack::synth::{generate_sequence, SequenceSpec};
use spintrack::tracker::{run_frames, TrackerConfig, UpdatePolicy};
use spintrack::Error;

fn short_sequence() -> spintrack::synth::SyntheticSequence {
    let mut spec = SequenceSpec::new(fixture("coffee"), 6);
    spec.box_w = 64.0;
    spec.box_h = 48.0;
    spec.rotation_step = 4.0;
    spec.translation_step = 2.0;
    generate_sequence(&spec).unwrap()
}

#[test]
fn written_sequence_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let seq = short_sequence();
    let boxes = seq.boxes();
    write_sequence(dir.path(), &seq.frames, &boxes).unwrap();
    let loaded = load_sequence(dir.path()).unwrap();
    assert_eq!(loaded.len(), 6);
    for (a, b) in loaded.groundtruth.iter().zip(&boxes) {
        assert!((a.cx - b.cx).abs() < 1e-3 && (a.cy - b.cy).abs() < 1e-3);
        assert!((a.area() - b.area()).abs() < 1e-2 * b.area());
    }
    // Frames are stored as 8-bit images.
    let frame = loaded.load_frame(3).unwrap();
    let diff = (frame.pixels() - seq.frames[3].pixels()).mapv(f64::abs);
    assert!(diff.iter().all(|d| *d <= 0.5 / 255.0 + 1e-9));
}

#[test]
fn results_file_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let seq = short_sequence();
    let out = run_frames(&TrackerConfig::default(), &seq.frames, &seq.boxes()[0]).unwrap();
    let path = dir.path().join("results.csv");
    write_results(&path, &out.records()).unwrap();
    assert_eq!(read_results(&path).unwrap(), out.records());
}

#[test]
fn checkpoint_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let reg = RsiRegressor::for_pairs([0.01, 0.02, 0.03], 4);
    let path = dir.path().join("w.bin");
    checkpoint::save(&reg, &path).unwrap();
    assert_eq!(checkpoint::load(&path).unwrap(), reg);
    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&path, bytes).unwrap();
    assert!(checkpoint::load(&path).is_err());
}

#[test]
fn config_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tracker.cfg");
    fs::write(&path, "# tighter gate\nkappa = 0.5\npolicy = fixed\n").unwrap();
    let cfg = TrackerConfig::load(&path).unwrap();
    assert_eq!(cfg.kappa, 0.5);
    assert_eq!(cfg.policy, UpdatePolicy::Fixed);
    assert_eq!(cfg.cell_size, TrackerConfig::default().cell_size);

    fs::write(&path, "kapa = 0.5\n").unwrap();
    assert!(TrackerConfig::load(&path).is_err());
}

#[test]
fn sequence_without_frames_or_boxes_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_sequence(dir.path()), Err(Error::Io { .. }) | Err(Error::InvalidInput(_))));

    let seq = short_sequence();
    write_sequence(dir.path(), &seq.frames, &seq.boxes()).unwrap();
    let gt = dir.path().join("groundtruth_rect.txt");
    fs::write(&gt, "").unwrap();
    assert!(matches!(load_sequence(dir.path()), Err(Error::Parse { .. })));
    fs::write(&gt, "1,2,3\n").unwrap();
    assert!(matches!(load_sequence(dir.path()), Err(Error::Parse { .. })));
}
