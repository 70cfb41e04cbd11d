//! Planar oriented boxes and convex polygon clipping.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Oriented box in the ground plane. `l` runs along the heading `yaw`, `w`
/// across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2d {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub l: f64,
    pub yaw: f64,
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut v = a % (2.0 * PI);
    if v <= -PI {
        v += 2.0 * PI;
    } else if v > PI {
        v -= 2.0 * PI;
    }
    v
}

impl Box2d {
    pub fn new(x: f64, y: f64, w: f64, l: f64, yaw: f64) -> Self {
        Box2d {
            x,
            y,
            w,
            l,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn center(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn area(&self) -> f64 {
        self.w * self.l
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.l > 0.0 && [self.x, self.y, self.w, self.l, self.yaw].iter().all(|v| v.is_finite())
    }

    /// Same pose, each side grown by `delta`.
    pub fn dilated(&self, delta: f64) -> Box2d {
        Box2d {
            w: self.w + delta,
            l: self.l + delta,
            ..*self
        }
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.l;
        let hw = 0.5 * self.w;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[u, v]| [self.x + c * u - s * v, self.y + s * u + c * v])
    }

    /// Point in box frame: `(along heading, across heading)`.
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Closed-interior membership test.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let [u, v] = self.to_local(p);
        u.abs() <= 0.5 * self.l && v.abs() <= 0.5 * self.w
    }

    /// Half-open membership `[-l/2, l/2) x [-w/2, w/2)` with both bounds shifted
    /// down by `eps`, so grid points on a box edge are assigned to exactly one
    /// of two abutting boxes.
    pub fn contains_half_open(&self, p: [f64; 2], eps: f64) -> bool {
        let [u, v] = self.to_local(p);
        u >= -0.5 * self.l - eps && u < 0.5 * self.l - eps && v >= -0.5 * self.w - eps && v < 0.5 * self.w - eps
    }
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a.abs()
}

/// Sutherland-Hodgman clipping of `subject` against a convex, counter-clockwise
/// `clip` polygon.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Intersection area of two oriented boxes.
pub fn intersection_area(a: &Box2d, b: &Box2d) -> f64 {
    let ra = 0.5 * (a.w * a.w + a.l * a.l).sqrt();
    let rb = 0.5 * (b.w * b.w + b.l * b.l).sqrt();
    let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
    if d > ra + rb {
        return 0.0;
    }
    polygon_area(&clip_convex(&a.corners(), &b.corners()))
}

/// Bird's-eye-view IoU of two oriented boxes.
pub fn rotated_iou(a: &Box2d, b: &Box2d) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn identical_and_disjoint() {
        let a = Box2d::new(1.0, 2.0, 1.8, 4.0, 0.3);
        assert_eq!(rotated_iou(&a, &a), 1.0);
        let b = Box2d::new(20.0, 2.0, 1.8, 4.0, 0.3);
        assert_eq!(rotated_iou(&a, &b), 0.0);
    }

    #[test]
    fn axis_aligned_half_overlap() {
        let a = Box2d::new(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = Box2d::new(1.0, 0.0, 2.0, 2.0, 0.0);
        // intersection 2, union 6
        assert!((rotated_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_on_random_pairs() {
        let mut rng = seed::rng(2);
        for _ in 0..200 {
            let mut draw = || {
                Box2d::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.5..3.0),
                    rng.random_range(0.5..5.0),
                    rng.random_range(-PI..PI),
                )
            };
            let (a, b) = (draw(), draw());
            let (x, y) = (rotated_iou(&a, &b), rotated_iou(&b, &a));
            assert!((x - y).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn rotation_by_right_angle_is_same_square() {
        let a = Box2d::new(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = Box2d::new(0.0, 0.0, 2.0, 2.0, PI / 2.0);
        assert!((rotated_iou(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-10.0, -PI, 0.0, PI, 7.0, 3.0 * PI] {
            let w = wrap_angle(a);
            assert!(w > -PI && w <= PI);
            assert!(((w - a) / (2.0 * PI)).fract().abs() < 1e-9 || ((w - a) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_box() -> impl Strategy<Value = Box2d> {
            (-3.0f64..3.0, -3.0f64..3.0, 0.3f64..3.0, 0.3f64..5.0, -PI..PI)
                .prop_map(|(x, y, w, l, yaw)| Box2d::new(x, y, w, l, yaw))
        }

        proptest! {
            #[test]
            fn iou_is_symmetric_and_bounded(a in any_box(), b in any_box()) {
                let ab = rotated_iou(&a, &b);
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert!((ab - rotated_iou(&b, &a)).abs() < 1e-12);
            }
        }
    }
}
