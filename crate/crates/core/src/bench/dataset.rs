//! Sequence directories: `<seq>/img/NNNN.(png|jpg)` frames plus
//! `<seq>/groundtruth_rect.txt`, one box per line as four numbers
//! (`x,y,w,h`, axis-aligned) or eight (corner polygon).

use std::fs;
use std::path::{Path, PathBuf};

use crate::bench::iou::RotatedBox;
use crate::error::{Error, Result};
use crate::imaging::Image;

pub const GROUNDTRUTH_FILE: &str = "groundtruth_rect.txt";
pub const FRAME_DIR: &str = "img";

#[derive(Debug, Clone)]
pub struct Sequence {
    pub dir: PathBuf,
    pub frames: Vec<PathBuf>,
    pub groundtruth: Vec<RotatedBox>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn load_frame(&self, index: usize) -> Result<Image> {
        let path = self.frames.get(index).ok_or_else(|| Error::Frame { index, message: "no such frame".into() })?;
        Image::load(path).map_err(|e| Error::Frame { index, message: e.to_string() })
    }

    pub fn initial_box(&self) -> Option<&RotatedBox> {
        self.groundtruth.first()
    }
}

fn is_frame_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Frame files sorted by numeric stem (falling back to name order).
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_frame_file(&path) {
            frames.push(path);
        }
    }
    frames.sort_by_key(|p| {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        (stem.parse::<u64>().unwrap_or(u64::MAX), stem)
    });
    Ok(frames)
}

pub fn parse_box_line(line: &str) -> std::result::Result<RotatedBox, String> {
    let nums = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    match nums.as_slice() {
        &[x, y, w, h] => RotatedBox::from_xywh(x, y, w, h).map_err(|e| e.to_string()),
        &[x1, y1, x2, y2, x3, y3, x4, y4] => {
            RotatedBox::from_polygon(&[(x1, y1), (x2, y2), (x3, y3), (x4, y4)]).map_err(|e| e.to_string())
        }
        other => Err(format!("expected 4 or 8 numbers, found {}", other.len())),
    }
}

pub fn load_groundtruth(path: &Path) -> Result<Vec<RotatedBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        boxes.push(parse_box_line(line).map_err(|m| Error::parse(path, i + 1, m))?);
    }
    Ok(boxes)
}

pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let frames = list_frames(&dir.join(FRAME_DIR))?;
    if frames.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no frames under {FRAME_DIR}/", dir.display())));
    }
    let gt_path = dir.join(GROUNDTRUTH_FILE);
    let groundtruth = load_groundtruth(&gt_path)?;
    if groundtruth.is_empty() {
        return Err(Error::parse(&gt_path, 1, "no boxes"));
    }
    Ok(Sequence { dir: dir.to_path_buf(), frames, groundtruth })
}

/// Eight-number polygon line for a box.
pub fn polygon_line(b: &RotatedBox) -> String {
    b.corners().iter().flat_map(|&(x, y)| [x, y]).map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
}

/// Writes frames and polygon ground truth in the sequence layout.
pub fn write_sequence(dir: &Path, frames: &[Image], boxes: &[RotatedBox]) -> Result<()> {
    let img_dir = dir.join(FRAME_DIR);
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    for (i, frame) in frames.iter().enumerate() {
        frame.save_png(img_dir.join(format!("{:04}.png", i + 1)))?;
    }
    let mut text = String::new();
    for b in boxes {
        text.push_str(&polygon_line(b));
        text.push('\n');
    }
    let gt = dir.join(GROUNDTRUTH_FILE);
    fs::write(&gt, text).map_err(|e| Error::io(&gt, e))
}
