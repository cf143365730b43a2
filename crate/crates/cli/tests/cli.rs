//! Drives the binary through synth, track, eval and train-rsi.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spintrack(args: &[&str], cwd: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_spintrack")).args(args).current_dir(cwd).output().unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn fixture() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/astronaut.png"))
}

#[test]
fn synth_track_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::copy(fixture(), root.join("base.png")).unwrap();
    fs::write(
        root.join("spec.txt"),
        "base = base.png\nframes = 12\nbox_w = 64\nbox_h = 48\nrotation_step = 2\ntranslation_step = 3\nseed = 2\n",
    )
    .unwrap();
    spintrack(&["synth", "spec.txt", "seq"], root);
    assert_eq!(fs::read_dir(root.join("seq/img")).unwrap().count(), 12);

    spintrack(&["track", "seq", "--out", "res.csv", "--overlay", "ov"], root);
    assert_eq!(fs::read_dir(root.join("ov")).unwrap().count(), 12);

    let eval = String::from_utf8(spintrack(&["eval", "res.csv", "seq"], root).stdout).unwrap();
    let miou: f64 =
        eval.lines().find_map(|l| l.strip_prefix("mean IoU ")).expect("mean IoU line").trim().parse().unwrap();
    assert!(miou >= 0.6, "{eval}");
}

#[test]
fn train_rsi_writes_weights_and_loss_curve() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir(root.join("corpus")).unwrap();
    fs::copy(fixture(), root.join("corpus/a.png")).unwrap();
    spintrack(&["train-rsi", "corpus", "--out", "w.bin", "--epochs", "2"], root);
    assert!(fs::metadata(root.join("w.bin")).unwrap().len() > 0);
    let csv = fs::read_to_string(root.join("w.csv")).unwrap();
    // Header, the initial loss and one row per epoch.
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn selftest_passes() {
    let out = spintrack(&["selftest"], Path::new("."));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn missing_sequence_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_spintrack"))
        .args(["track", "nowhere"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
