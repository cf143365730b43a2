//! Rotated rectangles and their intersection-over-union by convex polygon
//! clipping.

use crate::error::{Error, Result};
use crate::logpolar::wrap_degrees;
use crate::tracker::TargetState;

pub type Point = (f64, f64);

/// Rectangle of size `w x h` centered on `(cx, cy)`, its width axis rotated
/// by `angle_deg` with the same convention as the tracker state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub angle_deg: f64,
}

impl RotatedBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, angle_deg: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h, angle_deg: wrap_degrees(angle_deg) };
        if ![cx, cy, w, h, angle_deg].iter().all(|v| v.is_finite()) || w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidInput(format!("degenerate box {b:?}")));
        }
        Ok(b)
    }

    /// Axis-aligned box from its top-left corner and size.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x + 0.5 * w, y + 0.5 * h, w, h, 0.0)
    }

    pub fn from_state(state: &TargetState) -> Self {
        Self {
            cx: state.cx,
            cy: state.cy,
            w: state.base_w * state.scale,
            h: state.base_h * state.scale,
            angle_deg: wrap_degrees(state.rotation_deg),
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corners in order around the box.
    pub fn corners(&self) -> [Point; 4] {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (hw, hh) = (0.5 * self.w, 0.5 * self.h);
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)].map(|(u, v)| (self.cx + u * c - v * s, self.cy + u * s + v * c))
    }

    /// Minimum-area rectangle enclosing four corner points.
    pub fn from_polygon(points: &[Point; 4]) -> Result<Self> {
        let hull = convex_hull(points);
        if hull.len() < 3 || polygon_area(&hull).abs() < 1e-12 {
            return Err(Error::InvalidInput(format!("degenerate polygon {points:?}")));
        }
        let mut best: Option<(f64, RotatedBox)> = None;
        for i in 0..hull.len() {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
            if len < 1e-12 {
                continue;
            }
            let (ux, uy) = ((b.0 - a.0) / len, (b.1 - a.1) / len);
            let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for p in &hull {
                let u = p.0 * ux + p.1 * uy;
                let v = -p.0 * uy + p.1 * ux;
                u0 = u0.min(u);
                u1 = u1.max(u);
                v0 = v0.min(v);
                v1 = v1.max(v);
            }
            let area = (u1 - u0) * (v1 - v0);
            if best.as_ref().is_some_and(|(a, _)| *a <= area) {
                continue;
            }
            let (uc, vc) = (0.5 * (u0 + u1), 0.5 * (v0 + v1));
            let mut angle = uy.atan2(ux).to_degrees();
            let (mut w, mut h) = (u1 - u0, v1 - v0);
            // Same rectangle, angle folded into (-90, 90].
            if angle > 90.0 || angle <= -90.0 {
                angle = wrap_degrees(angle + 180.0);
            }
            if angle > 45.0 {
                angle -= 90.0;
                std::mem::swap(&mut w, &mut h);
            } else if angle <= -45.0 {
                angle += 90.0;
                std::mem::swap(&mut w, &mut h);
            }
            let bx = RotatedBox { cx: uc * ux - vc * uy, cy: uc * uy + vc * ux, w, h, angle_deg: angle };
            best = Some((area, bx));
        }
        best.map(|(_, b)| b).ok_or_else(|| Error::InvalidInput(format!("degenerate polygon {points:?}")))
    }
}

/// Shoelace area, positive for counterclockwise order in (x right, y up).
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        * 0.5
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Monotone-chain hull, counterclockwise.
fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn ccw(mut poly: Vec<Point>) -> Vec<Point> {
    if polygon_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

/// Clips `subject` to the convex counterclockwise polygon `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (dp, dq) = (cross(a, b, p), cross(a, b, q));
            if dp >= 0.0 {
                out.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let t = dp / (dp - dq);
                out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
    }
    out
}

pub fn intersection_area(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let pa = ccw(a.corners().to_vec());
    let pb = ccw(b.corners().to_vec());
    let clipped = clip_convex(&pa, &pb);
    if clipped.len() < 3 {
        return 0.0;
    }
    polygon_area(&clipped).abs()
}

pub fn rotated_iou(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_disjoint() {
        let a = RotatedBox::new(10.0, 10.0, 4.0, 6.0, 17.0).unwrap();
        assert!((rotated_iou(&a, &a) - 1.0).abs() < 1e-12);
        let b = RotatedBox::new(100.0, 10.0, 4.0, 6.0, 17.0).unwrap();
        assert_eq!(rotated_iou(&a, &b), 0.0);
    }

    #[test]
    fn square_against_diamond() {
        let a = RotatedBox::new(0.0, 0.0, 2.0, 2.0, 0.0).unwrap();
        let b = RotatedBox::new(0.0, 0.0, 2.0, 2.0, 45.0).unwrap();
        let inter = intersection_area(&a, &b);
        assert!((inter - 8.0 * (2f64.sqrt() - 1.0)).abs() < 1e-12);
        let expected = inter / (8.0 - inter);
        assert!((rotated_iou(&a, &b) - expected).abs() < 1e-12);
        assert!((rotated_iou(&a, &b) - 0.7071).abs() < 1e-3);
    }

    #[test]
    fn axis_aligned_closed_form() {
        let a = RotatedBox::from_xywh(0.0, 0.0, 4.0, 4.0).unwrap();
        let b = RotatedBox::from_xywh(2.0, 1.0, 4.0, 4.0).unwrap();
        assert_eq!(rotated_iou(&a, &b), 6.0 / 26.0);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(RotatedBox::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(RotatedBox::new(f64::NAN, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(RotatedBox::from_polygon(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).is_err());
    }

    #[test]
    fn polygon_round_trip() {
        let b = RotatedBox::new(50.0, 40.0, 30.0, 12.0, 33.0).unwrap();
        let back = RotatedBox::from_polygon(&b.corners()).unwrap();
        assert!((back.cx - 50.0).abs() < 1e-9 && (back.cy - 40.0).abs() < 1e-9);
        assert!((back.w - 30.0).abs() < 1e-9 && (back.h - 12.0).abs() < 1e-9);
        assert!((back.angle_deg - 33.0).abs() < 1e-9);
    }
}
