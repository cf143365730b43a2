//! Quick invariant checks on built-in synthetic data.

use ndarray::{Array2, Array3};

use spintrack::bench::{rotated_iou, RotatedBox};
use spintrack::features::FeatureMap;
use spintrack::imaging::Image;
use spintrack::logpolar::{logpolar_warp, LogPolarGrid};
use spintrack::optimizer::{adaptive_rate, should_update, UpdateController};
use spintrack::rsi::estimate_analytic;
use spintrack::synth::{generate_sequence, random_texture, warp_about_center, SequenceSpec};
use spintrack::tdd::{correlate, gaussian_label, score, tdd_loss, DiscriminativeModel, TddSample};
use spintrack::tracker::{run_frames, TrackerConfig};
use spintrack::Result;

type Check = fn() -> Result<(bool, String)>;

/// Runs every check, prints one line each and reports whether all passed.
pub fn run() -> bool {
    let checks: [(&str, Check); 7] = [
        ("rotated IoU", iou),
        ("rate and gate", rate_and_gate),
        ("hinge score", hinge),
        ("log-polar quarter turn", quarter_turn),
        ("analytic estimate", analytic),
        ("gradient check", gradient),
        ("short tracking run", tracking),
    ];
    let mut all = true;
    for (name, check) in checks {
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        all &= pass;
    }
    all
}

/// Deterministic values in `[-1, 1]` drawn from a noise texture.
fn noise_values(n: usize, seed: u64) -> Result<Vec<f64>> {
    let side = (n as f64).sqrt().ceil() as usize;
    let tex = random_texture(side.max(8), side.max(8), seed)?;
    Ok(tex.pixels().iter().take(n).map(|v| 2.5 * (v - 0.5)).collect())
}

fn noise_array3(dims: (usize, usize, usize), seed: u64) -> Result<Array3<f64>> {
    let v = noise_values(dims.0 * dims.1 * dims.2, seed)?;
    Ok(Array3::from_shape_vec(dims, v).expect("length matches the shape"))
}

fn iou() -> Result<(bool, String)> {
    let square = RotatedBox::new(0.0, 0.0, 2.0, 2.0, 0.0)?;
    let diamond = RotatedBox::new(0.0, 0.0, 2.0, 2.0, 45.0)?;
    let v = rotated_iou(&square, &diamond);
    Ok(((v - 0.7071).abs() <= 1e-3, format!("square vs 45 deg square {v:.5}")))
}

fn rate_and_gate() -> Result<(bool, String)> {
    let rates = adaptive_rate(16.0, 1.0)? == 0.0625 && adaptive_rate(4.0, 0.5)? == 0.25;
    let ctl = UpdateController { epsilon_0: Some(2.0), ..Default::default() };
    let gate = should_update(20, 1.8, &ctl) && !should_update(20, 1.0, &ctl) && !should_update(13, 10.0, &ctl);
    Ok((rates && gate, format!("rates {rates}, gate {gate}")))
}

fn hinge() -> Result<(bool, String)> {
    let x = FeatureMap::new(noise_array3((3, 9, 8), 1)?, 2);
    let w = noise_array3((3, 3, 3), 2)?;
    let raw = correlate(&x.values, &w);
    let linear = score(&DiscriminativeModel::new(w.clone(), Array2::ones((9, 8)), 0.0)?, &x)?.scores;
    let rectified = score(&DiscriminativeModel::new(w, Array2::zeros((9, 8)), 0.0)?, &x)?.scores;
    let pass = linear == raw && rectified == raw.mapv(|v| v.max(0.0));
    Ok((pass, "mask 1 is correlation, mask 0 its rectification".into()))
}

fn quarter_turn() -> Result<(bool, String)> {
    let img = random_texture(96, 96, 3)?;
    let turned = Image::from_fn(96, 96, |r, c| img.get(c, 95 - r))?;
    let grid = LogPolarGrid::for_patch(96, 96);
    let a = logpolar_warp(&img, &grid)?.values;
    let b = logpolar_warp(&turned, &grid)?.values;
    let (n_theta, n_rho) = a.dim();
    let q = n_theta / 4;
    let err = |shift: usize| {
        let mut sum = 0.0;
        for j in 0..n_theta {
            for i in 0..n_rho {
                sum += (b[(j, i)] - a[((j + shift) % n_theta, i)]).abs();
            }
        }
        sum / (n_theta * n_rho) as f64
    };
    let e = err(q).min(err(n_theta - q));
    Ok((e <= 0.05, format!("mean abs diff after a {q}-row roll {e:.4}")))
}

fn analytic() -> Result<(bool, String)> {
    let img = random_texture(128, 128, 4)?;
    let cand = warp_about_center(&img, 1.15, 10.0);
    let est = estimate_analytic(&img, &cand, &LogPolarGrid::for_spectrum(128, 128))?;
    let pass = (est.scale / 1.15 - 1.0).abs() <= 0.03 && (est.rotation_deg - 10.0).abs() <= 2.0;
    Ok((pass, format!("scale 1.15 / 10 deg estimated as {:.3} / {:.2} deg", est.scale, est.rotation_deg)))
}

fn gradient() -> Result<(bool, String)> {
    let model = DiscriminativeModel::new(noise_array3((2, 3, 3), 5)?, Array2::from_elem((7, 6), 0.3), 0.1)?;
    let samples = [TddSample {
        features: FeatureMap::new(noise_array3((2, 7, 6), 6)?, 1),
        label: gaussian_label((7, 6), (3, 2), 1.0)?,
    }];
    let analytic = tdd_loss(&model, &samples)?.grads.to_vec();
    let base = model.params();
    let mut probe = model.clone();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, g) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_params(&p);
        let up = tdd_loss(&probe, &samples)?.value;
        p[i] = base[i] - h;
        probe.set_params(&p);
        let down = tdd_loss(&probe, &samples)?.value;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-3));
    }
    Ok((worst <= 1e-4, format!("worst relative error {worst:.2e} over {} parameters", analytic.len())))
}

fn tracking() -> Result<(bool, String)> {
    let mut spec = SequenceSpec::new(random_texture(192, 192, 7)?, 20);
    spec.box_w = 64.0;
    spec.box_h = 48.0;
    spec.rotation_step = 2.0;
    spec.translation_step = 3.0;
    spec.seed = 7;
    let seq = generate_sequence(&spec)?;
    let gt = seq.boxes();
    let out = run_frames(&TrackerConfig::default(), &seq.frames, &gt[0])?;
    let ious: Vec<f64> = out.boxes().iter().zip(&gt).map(|(p, g)| rotated_iou(p, g)).collect();
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    Ok((mean >= 0.6, format!("20 frames, mean IoU {mean:.3}")))
}
