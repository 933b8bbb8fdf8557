//! Rotated-box primitives.
//!
//! Boxes are parameterized by their center, side lengths and a rotation angle
//! in the half-open interval `[-π/2, π/2)`. Polygons are counter-clockwise in
//! the numeric sense (positive shoelace area), independent of whether the
//! y axis points up or down on screen.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Vertex de-duplication tolerance used by the polygon clipper.
const DEDUP_EPS: f64 = 1e-12;

/// Relative tolerance under which two side lengths count as equal when
/// choosing the canonical representative of a square.
const SQUARE_TIE_EPS: f64 = 1e-9;

/// A rotated rectangle `(cx, cy, w, h, angle)`.
///
/// Constructed through [`OrientedBox::new`], which rejects non-positive or
/// non-finite sizes and canonicalizes the angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 5]", into = "[f64; 5]")]
pub struct OrientedBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    angle: f64,
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, angle: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::invalid(format!("non-finite box center ({cx}, {cy})")));
        }
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(Error::DegenerateInput(format!(
                "box sides must be positive and finite, got w={w}, h={h}"
            )));
        }
        Ok(Self {
            cx,
            cy,
            w,
            h,
            angle: normalize_angle(angle)?,
        })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.cx, self.cy, self.w, self.h, self.angle]
    }

    /// Spatial part `(cx, cy, w, h)`; the angle is dropped.
    pub fn xywh(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// Returns a copy with every coordinate divided by `scale` (pixel to
    /// normalized image coordinates for square images).
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        Self::new(
            self.cx / scale,
            self.cy / scale,
            self.w / scale,
            self.h / scale,
            self.angle,
        )
    }

    /// True if `p` lies inside the box, allowing `slack` outside each side.
    pub fn contains(&self, p: Point, slack: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = p[0] - self.cx;
        let dy = p[1] - self.cy;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= self.w / 2.0 + slack && v.abs() <= self.h / 2.0 + slack
    }

    /// Axis-aligned enclosure as `(xmin, ymin, xmax, ymax)`.
    pub fn aabb(&self) -> [f64; 4] {
        let corners = box_corners(self);
        let mut out = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in corners.vertices() {
            out[0] = out[0].min(p[0]);
            out[1] = out[1].min(p[1]);
            out[2] = out[2].max(p[0]);
            out[3] = out[3].max(p[1]);
        }
        out
    }
}

impl TryFrom<[f64; 5]> for OrientedBox {
    type Error = Error;

    fn try_from(v: [f64; 5]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }
}

impl From<OrientedBox> for [f64; 5] {
    fn from(b: OrientedBox) -> Self {
        b.to_array()
    }
}

/// A simple polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Signed shoelace area; positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            acc += a[0] * b[1] - b[0] * a[1];
        }
        acc / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn centroid_of_vertices(&self) -> Point {
        let n = self.vertices.len() as f64;
        let sx: f64 = self.vertices.iter().map(|p| p[0]).sum();
        let sy: f64 = self.vertices.iter().map(|p| p[1]).sum();
        [sx / n, sy / n]
    }
}

/// Maps an angle onto the canonical interval `[-π/2, π/2)` modulo π.
///
/// Values already inside the interval are returned untouched, which makes
/// the map exactly idempotent.
pub fn normalize_angle(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::invalid(format!("angle must be finite, got {a}")));
    }
    if (-FRAC_PI_2..FRAC_PI_2).contains(&a) {
        return Ok(a);
    }
    let k = ((a + FRAC_PI_2) / PI).floor();
    let mut r = a - k * PI;
    // Rounding can land exactly on either boundary.
    while r >= FRAC_PI_2 {
        r -= PI;
    }
    while r < -FRAC_PI_2 {
        r += PI;
    }
    Ok(r)
}

/// The four corners of `b` in counter-clockwise order, starting from the
/// corner at local offset `(-w/2, -h/2)`.
pub fn box_corners(b: &OrientedBox) -> Polygon {
    let (s, c) = b.angle.sin_cos();
    let hw = b.w / 2.0;
    let hh = b.h / 2.0;
    let local = [[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]];
    Polygon::new(
        local
            .iter()
            .map(|&[dx, dy]| [b.cx + dx * c - dy * s, b.cy + dx * s + dy * c])
            .collect(),
    )
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull by Andrew's monotone chain. Collinear points on hull edges are
/// dropped; the result is counter-clockwise.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Picks the canonical representative among the equivalent parameterizations
/// `(w, h, θ)` and `(h, w, θ + π/2)`: `w ≥ h`, and for squares the angle of
/// smallest magnitude.
fn canonical_box(cx: f64, cy: f64, w: f64, h: f64, angle: f64) -> Result<OrientedBox> {
    let scale = w.max(h);
    if (w - h).abs() <= SQUARE_TIE_EPS * scale {
        let a0 = normalize_angle(angle)?;
        let a1 = normalize_angle(angle + FRAC_PI_2)?;
        let pick = match a0.abs().total_cmp(&a1.abs()) {
            Ordering::Less => a0,
            Ordering::Greater => a1,
            Ordering::Equal => a0.min(a1),
        };
        let side = 0.5 * (w + h);
        OrientedBox::new(cx, cy, side, side, pick)
    } else if w >= h {
        OrientedBox::new(cx, cy, w, h, angle)
    } else {
        OrientedBox::new(cx, cy, h, w, angle + FRAC_PI_2)
    }
}

/// Minimum-area enclosing rectangle by rotating calipers over the convex hull.
///
/// Fails on fewer than three points or when all points are collinear.
pub fn min_area_rect(points: &[Point]) -> Result<OrientedBox> {
    if points.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "min_area_rect needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::invalid("non-finite point in min_area_rect input"));
    }
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(Error::DegenerateInput("all points are collinear".into()));
    }

    let n = hull.len();
    let mut best: Option<(f64, [f64; 6])> = None;
    for i in 0..n {
        let a = hull[i];
        let b = hull[(i + 1) % n];
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let len = ex.hypot(ey);
        if len == 0.0 {
            continue;
        }
        let u = [ex / len, ey / len];
        let v = [-u[1], u[0]];
        let (mut umin, mut umax, mut vmin, mut vmax) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for p in &hull {
            let pu = p[0] * u[0] + p[1] * u[1];
            let pv = p[0] * v[0] + p[1] * v[1];
            umin = umin.min(pu);
            umax = umax.max(pu);
            vmin = vmin.min(pv);
            vmax = vmax.max(pv);
        }
        let area = (umax - umin) * (vmax - vmin);
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            best = Some((area, [umin, umax, vmin, vmax, u[0], u[1]]));
        }
    }
    let (area, [umin, umax, vmin, vmax, ux, uy]) =
        best.ok_or_else(|| Error::DegenerateInput("hull has no edges".into()))?;
    if area <= 0.0 {
        return Err(Error::DegenerateInput("all points are collinear".into()));
    }
    let (vx, vy) = (-uy, ux);
    let mu = 0.5 * (umin + umax);
    let mv = 0.5 * (vmin + vmax);
    let cx = mu * ux + mv * vx;
    let cy = mu * uy + mv * vy;
    canonical_box(cx, cy, umax - umin, vmax - vmin, uy.atan2(ux))
}

/// Clips the convex polygon `subject` by the convex polygon `clip`
/// (Sutherland–Hodgman). Both must be counter-clockwise.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % m];
        let input = std::mem::take(&mut output);
        let n = input.len();
        for j in 0..n {
            let cur = input[j];
            let prev = input[(j + n - 1) % n];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, a, b));
            }
        }
        dedup_ring(&mut output);
    }
    output
}

fn segment_line_intersection(p: Point, q: Point, a: Point, b: Point) -> Point {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn dedup_ring(ring: &mut Vec<Point>) {
    let close = |a: Point, b: Point| (a[0] - b[0]).abs() <= DEDUP_EPS && (a[1] - b[1]).abs() <= DEDUP_EPS;
    ring.dedup_by(|b, a| close(*a, *b));
    while ring.len() > 1 && close(ring[0], ring[ring.len() - 1]) {
        ring.pop();
    }
}

/// Intersection over union of two rotated boxes via exact convex clipping.
pub fn rotated_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if a == b {
        return 1.0;
    }
    // Fixed argument order keeps the result bit-symmetric.
    let (first, second) = if a.to_array().iter().zip(b.to_array().iter()).map(|(x, y)| x.total_cmp(y)).find(|o| *o != Ordering::Equal) == Some(Ordering::Greater) {
        (b, a)
    } else {
        (a, b)
    };
    let pa = box_corners(first);
    let pb = box_corners(second);
    let inter = Polygon::new(clip_convex(pa.vertices(), pb.vertices())).area();
    let union = first.area() + second.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Axis-aligned box `(cx, cy, w, h)`; the form used by the regression loss.
pub type XywhBox = [f64; 4];

fn xywh_edges(b: &XywhBox) -> [f64; 4] {
    [
        b[0] - b[2] / 2.0,
        b[1] - b[3] / 2.0,
        b[0] + b[2] / 2.0,
        b[1] + b[3] / 2.0,
    ]
}

/// Components shared by IoU, GIoU and the GIoU gradient.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AaOverlap {
    pub inter: f64,
    pub union: f64,
    pub enclosure: f64,
}

pub(crate) fn aa_overlap(a: &XywhBox, b: &XywhBox) -> AaOverlap {
    let ea = xywh_edges(a);
    let eb = xywh_edges(b);
    let area_a = (ea[2] - ea[0]) * (ea[3] - ea[1]);
    let area_b = (eb[2] - eb[0]) * (eb[3] - eb[1]);
    let iw = (ea[2].min(eb[2]) - ea[0].max(eb[0])).max(0.0);
    let ih = (ea[3].min(eb[3]) - ea[1].max(eb[1])).max(0.0);
    let inter = iw * ih;
    let union = area_a + area_b - inter;
    let cw = ea[2].max(eb[2]) - ea[0].min(eb[0]);
    let ch = ea[3].max(eb[3]) - ea[1].min(eb[1]);
    AaOverlap {
        inter,
        union,
        enclosure: cw * ch,
    }
}

/// Plain IoU of two axis-aligned boxes.
pub fn aa_iou(a: &XywhBox, b: &XywhBox) -> f64 {
    let o = aa_overlap(a, b);
    o.inter / o.union
}

/// Generalized IoU of two axis-aligned `(cx, cy, w, h)` boxes.
pub fn aa_giou(a: &XywhBox, b: &XywhBox) -> f64 {
    let o = aa_overlap(a, b);
    o.inter / o.union - (o.enclosure - o.union) / o.enclosure
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn normalize_angle_examples() {
        assert_eq!(normalize_angle(0.0).unwrap(), 0.0);
        assert_eq!(normalize_angle(FRAC_PI_2).unwrap(), -FRAC_PI_2);
        assert_eq!(normalize_angle(2.0).unwrap(), 2.0 - PI);
        assert!(close(normalize_angle(2.0).unwrap(), -1.1416, 1e-4));
        assert!(normalize_angle(f64::NAN).is_err());
        assert!(normalize_angle(f64::INFINITY).is_err());
        let r = normalize_angle(-7.5 * PI + 0.1).unwrap();
        assert!((-FRAC_PI_2..FRAC_PI_2).contains(&r));
    }

    #[test]
    fn corners_of_axis_aligned_unit_square() {
        let b = OrientedBox::new(0.5, 0.5, 1.0, 1.0, 0.0).unwrap();
        let p = box_corners(&b);
        assert_eq!(p.vertices(), &[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        assert!(p.signed_area() > 0.0);
    }

    #[test]
    fn corners_of_rotated_box() {
        let b = OrientedBox::new(0.0, 0.0, 2.0, 1.0, PI / 4.0).unwrap();
        let p = box_corners(&b);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // (dx, dy) rotated by 45°: (dx - dy, dx + dy) / √2
        let expected = [
            [(-1.0 + 0.5) * r, (-1.0 - 0.5) * r],
            [(1.0 + 0.5) * r, (1.0 - 0.5) * r],
            [(1.0 - 0.5) * r, (1.0 + 0.5) * r],
            [(-1.0 - 0.5) * r, (-1.0 + 0.5) * r],
        ];
        for (got, want) in p.vertices().iter().zip(expected.iter()) {
            assert!(close(got[0], want[0], 1e-12) && close(got[1], want[1], 1e-12));
        }
        assert!(close(p.area(), 2.0, 1e-12));
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(OrientedBox::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(OrientedBox::new(0.0, 0.0, 1.0, -1.0, 0.0).is_err());
        assert!(OrientedBox::new(f64::NAN, 0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn min_area_rect_unit_square() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let b = min_area_rect(&pts).unwrap();
        assert!(close(b.cx(), 0.5, 1e-12) && close(b.cy(), 0.5, 1e-12));
        assert!(close(b.w(), 1.0, 1e-12) && close(b.h(), 1.0, 1e-12));
        assert_eq!(b.angle(), 0.0);
    }

    #[test]
    fn min_area_rect_prefers_long_side_as_width() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 3.0], [0.0, 3.0]];
        let b = min_area_rect(&pts).unwrap();
        assert!(close(b.w(), 3.0, 1e-12) && close(b.h(), 1.0, 1e-12));
        assert!(close(b.angle().abs(), FRAC_PI_2, 1e-12));
    }

    #[test]
    fn min_area_rect_degenerate_inputs() {
        assert!(matches!(
            min_area_rect(&[[0.0, 0.0], [1.0, 1.0]]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            min_area_rect(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            min_area_rect(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn rotated_iou_basic_cases() {
        let a = OrientedBox::new(3.0, -2.0, 2.0, 1.0, 0.3).unwrap();
        assert_eq!(rotated_iou(&a, &a), 1.0);
        let u = OrientedBox::new(0.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        let far = OrientedBox::new(100.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(rotated_iou(&u, &far), 0.0);
        let r = OrientedBox::new(0.0, 0.0, 1.0, 1.0, PI / 4.0).unwrap();
        let k = 2.0 * (2f64.sqrt() - 1.0);
        let expected = k / (2.0 - k);
        assert!(close(rotated_iou(&u, &r), expected, 1e-12));
        assert_eq!(rotated_iou(&u, &r), rotated_iou(&r, &u));
    }

    #[test]
    fn half_overlapping_squares() {
        let a = OrientedBox::new(0.0, 0.0, 2.0, 2.0, 0.0).unwrap();
        let b = OrientedBox::new(1.0, 0.0, 2.0, 2.0, 0.0).unwrap();
        assert!(close(rotated_iou(&a, &b), 2.0 / 6.0, 1e-12));
    }

    #[test]
    fn giou_examples() {
        let a = [0.5, 0.5, 1.0, 1.0];
        assert_eq!(aa_giou(&a, &a), 1.0);
        let b = [1.5, 0.5, 1.0, 1.0];
        assert!(close(aa_giou(&a, &b), 0.0, 1e-15));
        let far = [1e4, 0.5, 1.0, 1.0];
        assert!(aa_giou(&a, &far) < -0.99);
    }

    #[test]
    fn giou_never_exceeds_iou() {
        let a = [0.3, 0.4, 0.2, 0.5];
        let b = [0.45, 0.2, 0.4, 0.1];
        assert!(aa_giou(&a, &b) <= aa_iou(&a, &b));
    }

    #[test]
    fn hull_is_ccw_and_drops_interior() {
        let pts = [[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [2.0, 2.0], [0.0, 2.0], [1.0, 0.0]];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!(Polygon::new(hull).signed_area() > 0.0);
    }

    #[test]
    fn box_round_trips_through_serde() {
        let b = OrientedBox::new(1.0, 2.0, 3.0, 4.0, 0.5).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        let back: OrientedBox = serde_json::from_str(&s).unwrap();
        assert_eq!(b, back);
        assert!(serde_json::from_str::<OrientedBox>("[0,0,0,1,0]").is_err());
    }
}
