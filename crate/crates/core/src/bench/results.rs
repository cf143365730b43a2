//! Per-frame tracker output as CSV:
//! `frame,cx,cy,w,h,rotation_deg,scale,eps,y_max,updated`.

use std::fs;
use std::path::Path;

use crate::bench::iou::RotatedBox;
use crate::error::{Error, Result};

pub const HEADER: &str = "frame,cx,cy,w,h,rotation_deg,scale,eps,y_max,updated";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub rotation_deg: f64,
    pub scale: f64,
    /// Absent on frames without energy bookkeeping.
    pub eps: Option<f64>,
    pub y_max: f64,
    pub updated: bool,
}

impl FrameRecord {
    pub fn rotated_box(&self) -> Result<RotatedBox> {
        RotatedBox::new(self.cx, self.cy, self.w, self.h, self.rotation_deg)
    }

    pub fn to_line(&self) -> String {
        let eps = self.eps.map_or(String::new(), |e| format!("{e}"));
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.frame,
            self.cx,
            self.cy,
            self.w,
            self.h,
            self.rotation_deg,
            self.scale,
            eps,
            self.y_max,
            u8::from(self.updated)
        )
    }

    pub fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 10 {
            return Err(format!("expected 10 fields, found {}", f.len()));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|e| format!("field {}: {e}", i + 1));
        Ok(Self {
            frame: f[0].parse().map_err(|e| format!("field 1: {e}"))?,
            cx: num(1)?,
            cy: num(2)?,
            w: num(3)?,
            h: num(4)?,
            rotation_deg: num(5)?,
            scale: num(6)?,
            eps: if f[7].is_empty() { None } else { Some(num(7)?) },
            y_max: num(8)?,
            updated: match f[9] {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(format!("field 10: {other:?} is not a flag")),
            },
        })
    }
}

pub fn to_csv(records: &[FrameRecord]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub fn write_results(path: &Path, records: &[FrameRecord]) -> Result<()> {
    fs::write(path, to_csv(records)).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<FrameRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.trim() == HEADER) {
            continue;
        }
        out.push(FrameRecord::parse_line(line).map_err(|m| Error::parse(path, i + 1, m))?);
    }
    Ok(out)
}
