//! Peak location, parabolic sub-bin refinement and sidelobe statistics on
//! response surfaces.

use ndarray::Array2;

/// Maximum of a grid, first occurrence in row-major order.
pub fn argmax(grid: &Array2<f64>) -> (usize, usize, f64) {
    let mut best = (0, 0, f64::NEG_INFINITY);
    for ((r, c), &v) in grid.indexed_iter() {
        if v > best.2 {
            best = (r, c, v);
        }
    }
    best
}

/// Vertex offset of the parabola through `(-1, a)`, `(0, b)`, `(1, c)`,
/// clamped to `[-0.5, 0.5]`. Flat or non-concave neighborhoods give 0.
pub fn parabolic_offset(a: f64, b: f64, c: f64) -> f64 {
    let denom = a - 2.0 * b + c;
    if !(denom < 0.0) || !denom.is_finite() {
        return 0.0;
    }
    ((a - c) / (2.0 * denom)).clamp(-0.5, 0.5)
}

/// Sub-bin peak refinement along both axes. With `wrap` the neighbors are
/// taken circularly; otherwise an edge peak gets no refinement on that axis.
pub fn refine_peak(grid: &Array2<f64>, row: usize, col: usize, wrap: bool) -> (f64, f64) {
    let (h, w) = grid.dim();
    let b = grid[(row, col)];
    let neighbor = |r: isize, c: isize| -> Option<f64> {
        if wrap {
            let rr = r.rem_euclid(h as isize) as usize;
            let cc = c.rem_euclid(w as isize) as usize;
            Some(grid[(rr, cc)])
        } else if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            None
        } else {
            Some(grid[(r as usize, c as usize)])
        }
    };
    let (r, c) = (row as isize, col as isize);
    let dy = match (neighbor(r - 1, c), neighbor(r + 1, c)) {
        (Some(a), Some(cc)) if h >= 3 => parabolic_offset(a, b, cc),
        _ => 0.0,
    };
    let dx = match (neighbor(r, c - 1), neighbor(r, c + 1)) {
        (Some(a), Some(cc)) if w >= 3 => parabolic_offset(a, b, cc),
        _ => 0.0,
    };
    (dy, dx)
}

/// Mean and standard deviation of every cell outside a `window x window`
/// square centered on `(row, col)`. Along an axis shorter than the window the
/// exclusion shrinks to half the map size.
pub fn sidelobe_stats(grid: &Array2<f64>, row: usize, col: usize, window: usize) -> (f64, f64) {
    let (h, w) = grid.dim();
    let half_r = exclusion_half(h, window);
    let half_c = exclusion_half(w, window);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut n = 0usize;
    for ((r, c), &v) in grid.indexed_iter() {
        if r.abs_diff(row) <= half_r && c.abs_diff(col) <= half_c {
            continue;
        }
        sum += v;
        sum_sq += v * v;
        n += 1;
    }
    if n == 0 {
        return (grid[(row, col)], 0.0);
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    (mean, var.sqrt())
}

fn exclusion_half(len: usize, window: usize) -> usize {
    let span = if len < window { len / 2 } else { window };
    span / 2
}

/// Peak-to-sidelobe ratio with the standard deviation floored at `min_sigma`.
pub fn peak_to_sidelobe(grid: &Array2<f64>, window: usize, min_sigma: f64) -> f64 {
    let (r, c, peak) = argmax(grid);
    let (mean, std) = sidelobe_stats(grid, r, c, window);
    (peak - mean) / std.max(min_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_first_occurrence() {
        let mut g = Array2::zeros((3, 3));
        g[(1, 2)] = 1.0;
        g[(2, 0)] = 1.0;
        assert_eq!(argmax(&g), (1, 2, 1.0));
    }

    #[test]
    fn parabola_examples() {
        assert_eq!(parabolic_offset(0.5, 1.0, 0.5), 0.0);
        assert!((parabolic_offset(0.5, 1.0, 0.9) - 1.0 / 3.0).abs() < 1e-12);
        assert!((parabolic_offset(0.9, 1.0, 0.5) + 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(parabolic_offset(1.0, 1.0, 1.0), 0.0);
        assert_eq!(parabolic_offset(0.0, 1.0, 1.0), 0.5);
    }

    #[test]
    fn sidelobe_excludes_window() {
        let mut g = Array2::from_elem((20, 20), 1.0);
        for r in 5..16 {
            for c in 5..16 {
                g[(r, c)] = 50.0;
            }
        }
        let (mean, std) = sidelobe_stats(&g, 10, 10, 11);
        assert_eq!(mean, 1.0);
        assert_eq!(std, 0.0);
    }

    #[test]
    fn small_maps_shrink_window() {
        let g = Array2::from_shape_fn((6, 6), |(r, c)| (r * 6 + c) as f64);
        // window shrinks to 3 -> half-width 1
        let (mean, _) = sidelobe_stats(&g, 0, 0, 11);
        let excluded = [0.0, 1.0, 6.0, 7.0];
        let expected = (g.sum() - excluded.iter().sum::<f64>()) / 32.0;
        assert!((mean - expected).abs() < 1e-12);
    }
}
