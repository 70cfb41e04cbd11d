//! Rendering of boxes and map geometry onto cell grids.

use ndarray::Array2;

use super::geometry::Box2d;
use crate::error::{ensure, Result};
use crate::grid::{GridSpec, IdGrid};

/// Tolerance applied to box edges so cell centres lying exactly on an edge
/// resolve the same way regardless of rounding.
const EDGE_EPS: f64 = 1e-9;

/// Cells `(row, col)` whose centres fall inside `b`.
///
/// Membership is half-open along both box axes (`[-l/2, l/2) x [-w/2, w/2)`),
/// which keeps rasterisation exactly translation-equivariant by whole cells.
pub fn box_cells(spec: &GridSpec, b: &Box2d) -> Vec<(usize, usize)> {
    let corners = b.corners();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in corners {
        let f = spec.world_to_cell(c);
        for k in 0..2 {
            lo[k] = lo[k].min(f[k]);
            hi[k] = hi[k].max(f[k]);
        }
    }
    let c0 = lo[0].floor().max(0.0) as usize;
    let r0 = lo[1].floor().max(0.0) as usize;
    if hi[0] < 0.0 || hi[1] < 0.0 {
        return Vec::new();
    }
    let c1 = (hi[0].ceil() as usize).min(spec.width.saturating_sub(1));
    let r1 = (hi[1].ceil() as usize).min(spec.height.saturating_sub(1));
    let mut out = Vec::new();
    for r in r0..=r1 {
        for c in c0..=c1 {
            if b.contains_half_open(spec.cell_center(r, c), EDGE_EPS) {
                out.push((r, c));
            }
        }
    }
    out
}

/// Instance-id raster of a set of boxes (0 = free). Where boxes overlap, the
/// larger id wins.
pub fn rasterize_boxes(spec: &GridSpec, boxes: &[Box2d], ids: &[u32]) -> Result<IdGrid> {
    ensure!(
        boxes.len() == ids.len(),
        "bev-scene",
        "rasterize_boxes",
        "{} boxes but {} ids",
        boxes.len(),
        ids.len()
    );
    ensure!(
        ids.iter().all(|&i| i > 0),
        "bev-scene",
        "rasterize_boxes",
        "instance ids must be positive"
    );
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by_key(|&i| ids[i]);
    let mut grid = IdGrid::zeros(*spec);
    for i in order {
        for (r, c) in box_cells(spec, &boxes[i]) {
            grid.data[[r, c]] = ids[i];
        }
    }
    Ok(grid)
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - qx).powi(2) + (p[1] - qy).powi(2)).sqrt()
}

/// Cells whose centres lie within `half_width` of any polyline.
pub fn rasterize_polylines(spec: &GridSpec, lines: &[Vec<[f64; 2]>], half_width: f64) -> Array2<bool> {
    let mut mask = Array2::from_elem((spec.height, spec.width), false);
    for line in lines {
        for seg in line.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let fa = spec.world_to_cell([a[0].min(b[0]) - half_width, a[1].min(b[1]) - half_width]);
            let fb = spec.world_to_cell([a[0].max(b[0]) + half_width, a[1].max(b[1]) + half_width]);
            if fb[0] < 0.0 || fb[1] < 0.0 || fa[0] > spec.width as f64 || fa[1] > spec.height as f64 {
                continue;
            }
            let c0 = fa[0].floor().max(0.0) as usize;
            let r0 = fa[1].floor().max(0.0) as usize;
            let c1 = (fb[0].ceil() as usize).min(spec.width - 1);
            let r1 = (fb[1].ceil() as usize).min(spec.height - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if point_segment_distance(spec.cell_center(r, c), a, b) <= half_width {
                        mask[[r, c]] = true;
                    }
                }
            }
        }
    }
    mask
}

/// Even-odd fill of closed polygons at cell centres.
pub fn rasterize_polygons(spec: &GridSpec, polys: &[Vec<[f64; 2]>]) -> Array2<bool> {
    let mut mask = Array2::from_elem((spec.height, spec.width), false);
    for poly in polys.iter().filter(|p| p.len() >= 3) {
        for r in 0..spec.height {
            for c in 0..spec.width {
                if point_in_polygon(spec.cell_center(r, c), poly) {
                    mask[[r, c]] = true;
                }
            }
        }
    }
    mask
}

pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;
    use std::collections::BTreeSet;

    #[test]
    fn empty_list_is_free() {
        let g = rasterize_boxes(&GridSpec::default(), &[], &[]).unwrap();
        assert!(g.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn two_cell_box_on_cell_centre_covers_two_by_two() {
        let spec = GridSpec::default();
        let c = spec.cell_center(100, 57);
        let b = Box2d::new(c[0], c[1], 1.024, 1.024, 0.0);
        let g = rasterize_boxes(&spec, &[b], &[3]).unwrap();
        assert_eq!(g.count(3), 4);
        let cells: BTreeSet<_> = box_cells(&spec, &b).into_iter().collect();
        assert_eq!(cells, BTreeSet::from([(99, 56), (99, 57), (100, 56), (100, 57)]));
    }

    #[test]
    fn overlap_larger_id_wins() {
        let spec = GridSpec::default();
        let a = Box2d::new(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = Box2d::new(0.5, 0.0, 2.0, 2.0, 0.0);
        let g1 = rasterize_boxes(&spec, &[a, b], &[7, 2]).unwrap();
        let g2 = rasterize_boxes(&spec, &[b, a], &[2, 7]).unwrap();
        assert_eq!(g1, g2);
        let centre = spec.world_to_cell([0.25, 0.0]);
        assert_eq!(g1.data[[centre[1].round() as usize, centre[0].round() as usize]], 7);
    }

    #[test]
    fn rejects_zero_id() {
        let b = Box2d::new(0.0, 0.0, 1.0, 1.0, 0.0);
        assert!(rasterize_boxes(&GridSpec::default(), &[b], &[0]).is_err());
    }

    #[test]
    fn translation_by_one_pitch_shifts_cells() {
        let spec = GridSpec::default();
        let mut rng = seed::rng(12);
        for _ in 0..200 {
            let b = Box2d::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..6.0),
                rng.random_range(-3.1..3.1),
            );
            let shifted = Box2d {
                x: b.x + spec.cell_width(),
                ..b
            };
            let a: BTreeSet<_> = box_cells(&spec, &b).into_iter().map(|(r, c)| (r, c + 1)).collect();
            let s: BTreeSet<_> = box_cells(&spec, &shifted).into_iter().collect();
            assert_eq!(a, s);
        }
    }

    #[test]
    fn polygon_fill_square() {
        let spec = GridSpec::new(10, 10, [0.0, 10.0, 0.0, 10.0]).unwrap();
        let m = rasterize_polygons(&spec, &[vec![[2.0, 2.0], [6.0, 2.0], [6.0, 6.0], [2.0, 6.0]]]);
        assert_eq!(m.iter().filter(|&&v| v).count(), 16);
        let l = rasterize_polylines(&spec, &[vec![[0.0, 5.5], [10.0, 5.5]]], 0.25);
        assert_eq!(l.iter().filter(|&&v| v).count(), 10);
    }
}
