//! Synthetic scenes of rotated rectangles, ellipses and triangles.
//!
//! Every pixel value is a multiple of 1/255 so that scenes survive an 8-bit
//! PNG round trip unchanged.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::Image;
use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Triangle,
}

/// Base colours; each shape kind prefers a subset so that appearance and
/// geometry both carry signal.
pub const PALETTE: [[f64; 3]; 6] = [
    [0.90, 0.20, 0.15],
    [0.15, 0.75, 0.25],
    [0.20, 0.35, 0.90],
    [0.95, 0.85, 0.20],
    [0.80, 0.30, 0.85],
    [0.20, 0.85, 0.85],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInstance {
    /// Convex outline in pixel coordinates, counter-clockwise.
    pub mask: Vec<Point>,
    pub kind: ShapeKind,
    pub color: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: Image,
    pub instances: Vec<SceneInstance>,
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn outline(kind: ShapeKind, cx: f64, cy: f64, a: f64, b: f64, theta: f64) -> Vec<Point> {
    let local: Vec<Point> = match kind {
        ShapeKind::Rectangle => vec![[-a, -b], [a, -b], [a, b], [-a, b]],
        ShapeKind::Ellipse => (0..16)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / 16.0;
                [a * t.cos(), b * t.sin()]
            })
            .collect(),
        ShapeKind::Triangle => vec![[-a, -b], [a, -b * 0.6], [-a * 0.2, b]],
    };
    let (s, c) = theta.sin_cos();
    local
        .into_iter()
        .map(|[x, y]| [cx + x * c - y * s, cy + x * s + y * c])
        .collect()
}

fn inside_convex(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
    })
}

/// A `size × size` scene with exactly `n_objects` non-overlapping shapes
/// (fewer only if placement keeps failing on a crowded canvas).
pub fn generate_scene(seed: u64, n_objects: usize, size: usize) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let base = [
        rng.random_range(0.05..0.25),
        rng.random_range(0.05..0.25),
        rng.random_range(0.05..0.25),
    ];
    let tilt = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
    let mut image = Image::filled(size, size, [0.0; 3]);
    for r in 0..size {
        for c in 0..size {
            let shade = tilt[0] * (r as f64 / s) + tilt[1] * (c as f64 / s);
            let noise = rng.random_range(-0.03..0.03);
            let v = base.map(|b| quantize(b + shade + noise));
            image.set(r, c, v);
        }
    }

    let mut instances: Vec<SceneInstance> = Vec::with_capacity(n_objects);
    let mut discs: Vec<(f64, f64, f64)> = Vec::new();
    let mut attempts = 0;
    while instances.len() < n_objects && attempts < 200 * (n_objects + 1) {
        attempts += 1;
        let kind = match rng.random_range(0..3) {
            0 => ShapeKind::Rectangle,
            1 => ShapeKind::Ellipse,
            _ => ShapeKind::Triangle,
        };
        let a = rng.random_range(0.10 * s..0.22 * s);
        let b = rng.random_range(0.06 * s..0.7 * a.max(0.07 * s));
        let radius = a.hypot(b);
        let margin = radius + 0.5;
        if 2.0 * margin >= s {
            continue;
        }
        let cx = rng.random_range(margin..s - margin);
        let cy = rng.random_range(margin..s - margin);
        let theta = rng.random_range(-PI..PI);
        if discs
            .iter()
            .any(|&(x, y, r)| (x - cx).hypot(y - cy) < r + radius + 0.5)
        {
            continue;
        }
        let color = (kind as usize * 2 + rng.random_range(0..2)) % PALETTE.len();
        let shade = rng.random_range(-0.08..0.08);
        let rgb = PALETTE[color].map(|v| quantize(v + shade));
        let mask = outline(kind, cx, cy, a, b, theta);
        for r in 0..size {
            for c in 0..size {
                if inside_convex(&mask, [c as f64 + 0.5, r as f64 + 0.5]) {
                    image.set(r, c, rgb);
                }
            }
        }
        discs.push((cx, cy, radius));
        instances.push(SceneInstance { mask, kind, color });
    }
    SyntheticScene { image, instances }
}
