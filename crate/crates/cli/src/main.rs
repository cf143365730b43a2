//! Command-line front end: track sequences, score results, generate
//! synthetic data, train the rotation-scale regressor and run self-checks.

mod selftest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use spintrack::bench::dataset::list_frames;
use spintrack::bench::overlay::save_overlay;
use spintrack::bench::{load_sequence, read_results, write_results, write_sequence, MetricReport, RotatedBox};
use spintrack::imaging::{resample, Image, SamplingFrame};
use spintrack::logpolar::LogPolarGrid;
use spintrack::rsi::{checkpoint, train_rsi, PreparedPair, RsiRegressor, RsiTrainingPair, TrainConfig};
use spintrack::synth::{
    generate_sequence, make_training_pairs, one_sided_grid, segment_training_pairs, symmetric_grid, SequenceSpec,
};
use spintrack::tracker::{run_sequence, TargetState, TrackerConfig};

#[derive(Parser)]
#[command(name = "spintrack", version, about = "Rotation- and scale-aware single object tracker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a sequence directory from its first ground-truth box.
    Track {
        seq_dir: PathBuf,
        /// Tracker config file of `key = value` lines.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
        /// Directory for per-frame images with the boxes drawn.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Score a results file against a sequence's ground truth.
    Eval { results: PathBuf, seq_dir: PathBuf },
    /// Render a synthetic sequence from a spec file.
    Synth { spec: PathBuf, out_dir: PathBuf },
    /// Train the rotation-scale regressor on images or sequence directories.
    TrainRsi {
        corpus_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        /// Log-polar bins per axis.
        #[arg(long, default_value_t = 32)]
        bins: usize,
        /// Feature cell size in log-polar bins.
        #[arg(long, default_value_t = 2)]
        cell: usize,
        /// Kernel norm penalty applied to all three layers.
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        /// Use both rotation signs for image corpora.
        #[arg(long)]
        symmetric: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Loss curve destination; defaults to the weights path with a .csv extension.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Run quick invariant checks on built-in synthetic data.
    Selftest,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Track { seq_dir, config, out, overlay } => {
            track(&seq_dir, config.as_deref(), &out, overlay.as_deref())?
        }
        Command::Eval { results, seq_dir } => eval(&results, &seq_dir)?,
        Command::Synth { spec, out_dir } => synth(&spec, &out_dir)?,
        Command::TrainRsi {
            corpus_dir,
            out,
            epochs,
            batch_size,
            lr,
            bins,
            cell,
            lambda,
            symmetric,
            seed,
            loss_csv,
        } => {
            let cfg = TrainConfig { epochs, batch_size, learning_rate: lr, seed, ..Default::default() };
            let loss_csv = loss_csv.unwrap_or_else(|| out.with_extension("csv"));
            train(&corpus_dir, &out, &loss_csv, &cfg, bins, cell, lambda, symmetric)?;
        }
        Command::Selftest => return Ok(if selftest::run() { ExitCode::SUCCESS } else { ExitCode::FAILURE }),
    }
    Ok(ExitCode::SUCCESS)
}

fn track(seq_dir: &Path, config: Option<&Path>, out: &Path, overlay: Option<&Path>) -> Result<()> {
    let cfg = match config {
        Some(path) => TrackerConfig::load(path)?,
        None => TrackerConfig::default(),
    };
    let seq = load_sequence(seq_dir)?;
    let Some(annotation) = seq.initial_box().copied() else {
        bail!("{} has no ground-truth box for the first frame", seq_dir.display());
    };
    let result = run_sequence(&cfg, seq.len(), |i| seq.load_frame(i), &annotation)?;
    write_results(out, &result.records())?;
    println!("tracked {} frames at {:.1} fps -> {}", result.frames.len(), result.fps(), out.display());
    let c = result.counters;
    println!("model updates {} (gate checks {}, skipped {})", c.updates, c.checks, c.skipped);

    let boxes = result.boxes();
    if seq.groundtruth.len() == boxes.len() {
        println!("{}", MetricReport::compute(&boxes, &seq.groundtruth, Some(result.fps()))?.summary());
    }
    if let Some(dir) = overlay {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, b) in boxes.iter().enumerate() {
            let frame = seq.load_frame(i)?;
            save_overlay(&dir.join(format!("{:04}.png", i + 1)), &frame, b, seq.groundtruth.get(i))?;
        }
        println!("overlays -> {}", dir.display());
    }
    Ok(())
}

fn eval(results: &Path, seq_dir: &Path) -> Result<()> {
    let records = read_results(results)?;
    let pred = records.iter().map(|r| r.rotated_box()).collect::<spintrack::Result<Vec<_>>>()?;
    let seq = load_sequence(seq_dir)?;
    if seq.groundtruth.len() != pred.len() {
        bail!("{} results but {} ground-truth boxes", pred.len(), seq.groundtruth.len());
    }
    println!("{}", MetricReport::compute(&pred, &seq.groundtruth, None)?.summary());
    Ok(())
}

fn synth(spec_path: &Path, out_dir: &Path) -> Result<()> {
    let spec = SequenceSpec::load(spec_path)?;
    let seq = generate_sequence(&spec)?;
    write_sequence(out_dir, &seq.frames, &seq.boxes())?;
    println!("wrote {} frames -> {}", seq.frames.len(), out_dir.display());
    Ok(())
}

/// Patch side used for regressor training crops.
const TRAIN_PATCH: usize = 128;
/// Padding around the target box for sequence crops.
const TRAIN_PAD: f64 = 2.0;

/// States relative to the first box: scale from the area ratio, rotation
/// from the box angle.
fn states_from_boxes(boxes: &[RotatedBox]) -> Vec<TargetState> {
    let first = boxes[0];
    boxes
        .iter()
        .map(|b| TargetState {
            cx: b.cx,
            cy: b.cy,
            base_w: first.w,
            base_h: first.h,
            scale: ((b.w * b.h) / (first.w * first.h)).sqrt(),
            rotation_deg: b.angle_deg,
        })
        .collect()
}

fn corpus_pairs(corpus: &Path, lp: &LogPolarGrid, symmetric: bool) -> Result<Vec<RsiTrainingPair>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(corpus)
        .with_context(|| format!("reading {}", corpus.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    let mut pairs = Vec::new();
    for dir in entries.iter().filter(|p| p.is_dir()) {
        let seq = load_sequence(dir)?;
        if seq.groundtruth.len() != seq.len() || seq.is_empty() {
            bail!("{}: every frame needs a ground-truth box", dir.display());
        }
        let frames = (0..seq.len()).map(|i| seq.load_frame(i)).collect::<spintrack::Result<Vec<_>>>()?;
        let states = states_from_boxes(&seq.groundtruth);
        pairs.extend(segment_training_pairs(&frames, &states, TRAIN_PATCH, TRAIN_PAD, lp)?);
    }
    let grid = if symmetric { symmetric_grid() } else { one_sided_grid() };
    for path in list_frames(corpus)? {
        let img = Image::load(&path)?;
        let (h, w) = img.dims();
        if h < TRAIN_PATCH || w < TRAIN_PATCH {
            bail!("{} is smaller than {TRAIN_PATCH}x{TRAIN_PATCH}", path.display());
        }
        let origin = (((w - TRAIN_PATCH) / 2) as f64, ((h - TRAIN_PATCH) / 2) as f64);
        let frame = SamplingFrame { origin, col_step: (1.0, 0.0), row_step: (0.0, 1.0) };
        let anchor = resample(&img, &frame, (TRAIN_PATCH, TRAIN_PATCH));
        pairs.extend(make_training_pairs(&anchor, &grid, lp)?);
    }
    if pairs.is_empty() {
        bail!("{} holds no images or sequence directories", corpus.display());
    }
    Ok(pairs)
}

#[allow(clippy::too_many_arguments)]
fn train(
    corpus: &Path,
    out: &Path,
    loss_csv: &Path,
    cfg: &TrainConfig,
    bins: usize,
    cell: usize,
    lambda: f64,
    symmetric: bool,
) -> Result<()> {
    let lp = LogPolarGrid::for_patch(TRAIN_PATCH, TRAIN_PATCH).with_bins(bins, bins);
    let pairs = corpus_pairs(corpus, &lp, symmetric)?;
    let prepared = pairs.iter().map(|p| PreparedPair::from_pair(p, cell)).collect::<spintrack::Result<Vec<_>>>()?;
    println!("training on {} pairs for {} epochs", prepared.len(), cfg.epochs);
    let report = train_rsi(RsiRegressor::for_pairs([lambda; 3], cfg.seed), &prepared, cfg)?;
    checkpoint::save(&report.regressor, out)?;
    fs::write(loss_csv, report.loss_csv()).with_context(|| format!("writing {}", loss_csv.display()))?;
    println!(
        "loss {:.5} -> {:.5}; weights -> {}; loss curve -> {}",
        report.initial_loss,
        report.final_loss(),
        out.display(),
        loss_csv.display()
    );
    Ok(())
}
