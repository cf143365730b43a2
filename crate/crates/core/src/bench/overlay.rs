//! Frame overlays with rotated boxes drawn on top.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::bench::iou::RotatedBox;
use crate::error::{Error, Result};
use crate::imaging::Image;

pub const PREDICTION_COLOR: Rgb<u8> = Rgb([230, 40, 40]);
pub const GROUNDTRUTH_COLOR: Rgb<u8> = Rgb([40, 200, 60]);

/// Draws a one-pixel line, clipped to the raster.
fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (x0 + t * (x1 - x0)).round();
        let y = (y0 + t * (y1 - y0)).round();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

pub fn draw_box(img: &mut RgbImage, b: &RotatedBox, color: Rgb<u8>) {
    let c = b.corners();
    for k in 0..4 {
        draw_line(img, c[k], c[(k + 1) % 4], color);
    }
}

/// The frame in gray with the prediction and, if given, the ground truth.
pub fn render(frame: &Image, prediction: &RotatedBox, groundtruth: Option<&RotatedBox>) -> RgbImage {
    let gray = frame.to_gray8();
    let mut out = RgbImage::from_fn(gray.width(), gray.height(), |x, y| {
        let v = gray.get_pixel(x, y)[0];
        Rgb([v, v, v])
    });
    if let Some(gt) = groundtruth {
        draw_box(&mut out, gt, GROUNDTRUTH_COLOR);
    }
    draw_box(&mut out, prediction, PREDICTION_COLOR);
    out
}

pub fn save_overlay(
    path: &Path,
    frame: &Image,
    prediction: &RotatedBox,
    groundtruth: Option<&RotatedBox>,
) -> Result<()> {
    render(frame, prediction, groundtruth)
        .save(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_outline_lands_on_its_corners() {
        let frame = Image::constant(40, 50, 0.5).unwrap();
        let b = RotatedBox::from_xywh(10.0, 5.0, 20.0, 12.0).unwrap();
        let out = render(&frame, &b, None);
        assert_eq!(out.dimensions(), (50, 40));
        assert_eq!(*out.get_pixel(10, 5), PREDICTION_COLOR);
        assert_eq!(*out.get_pixel(30, 17), PREDICTION_COLOR);
        assert_eq!(*out.get_pixel(20, 11), Rgb([128, 128, 128]));
    }

    #[test]
    fn boxes_off_the_raster_are_clipped() {
        let frame = Image::constant(10, 10, 0.0).unwrap();
        let b = RotatedBox::new(-50.0, -50.0, 30.0, 30.0, 30.0).unwrap();
        let out = render(&frame, &b, None);
        assert!(out.pixels().all(|p| *p == Rgb([0, 0, 0])));
    }
}
