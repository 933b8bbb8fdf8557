//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use std::path::Path;

use mutdet_core::detector::Detector;
use mutdet_core::harness::{self, RunConfig, TrainItem};
use mutdet_core::nn::Matrix;
use mutdet_core::prep::PrepConfig;
use mutdet_core::OrientedBox;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// Point-in-rectangle test in the box frame, written from the box fields.
pub fn inside(b: &[f64; 5], x: f64, y: f64) -> bool {
    let [cx, cy, w, h, a] = *b;
    let (s, c) = a.sin_cos();
    let dx = x - cx;
    let dy = y - cy;
    let u = dx * c + dy * s;
    let v = -dx * s + dy * c;
    u.abs() <= w / 2.0 && v.abs() <= h / 2.0
}

fn corners(b: &[f64; 5]) -> [[f64; 2]; 4] {
    let [cx, cy, w, h, a] = *b;
    let (s, c) = a.sin_cos();
    let mut out = [[0.0; 2]; 4];
    for (k, (du, dv)) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].into_iter().enumerate() {
        let u = du * w / 2.0;
        let v = dv * h / 2.0;
        out[k] = [cx + u * c - v * s, cy + u * s + v * c];
    }
    out
}

/// Stratified Monte-Carlo IoU: one jittered sample per cell of a
/// `side × side` grid over the joint bounding box.
pub fn monte_carlo_iou(a: &[f64; 5], b: &[f64; 5], side: usize, seed: u64) -> f64 {
    let pts: Vec<[f64; 2]> = corners(a).into_iter().chain(corners(b)).collect();
    let x0 = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let x1 = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let y0 = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let y1 = pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let dx = (x1 - x0) / side as f64;
    let dy = (y1 - y0) / side as f64;
    let mut r = rng(seed);
    let (mut both, mut either) = (0u64, 0u64);
    for i in 0..side {
        for j in 0..side {
            let x = x0 + (i as f64 + r.random::<f64>()) * dx;
            let y = y0 + (j as f64 + r.random::<f64>()) * dy;
            let ia = inside(a, x, y);
            let ib = inside(b, x, y);
            both += u64::from(ia && ib);
            either += u64::from(ia || ib);
        }
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

/// Smallest area among rectangles aligned with each whole degree in
/// `[0°, 90°)` that enclose all points.
pub fn grid_min_rect_area(points: &[[f64; 2]]) -> f64 {
    (0..90)
        .map(|deg| {
            let t = (deg as f64).to_radians();
            let (s, c) = t.sin_cos();
            let (mut umin, mut umax, mut vmin, mut vmax) =
                (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            for p in points {
                let u = p[0] * c + p[1] * s;
                let v = -p[0] * s + p[1] * c;
                umin = umin.min(u);
                umax = umax.max(u);
                vmin = vmin.min(v);
                vmax = vmax.max(v);
            }
            (umax - umin) * (vmax - vmin)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Whether `p` lies in the box with an absolute slack on both half-extents.
pub fn contained(b: &OrientedBox, p: [f64; 2], slack: f64) -> bool {
    let (s, c) = b.angle().sin_cos();
    let dx = p[0] - b.cx();
    let dy = p[1] - b.cy();
    let u = dx * c + dy * s;
    let v = -dx * s + dy * c;
    u.abs() <= b.w() / 2.0 + slack && v.abs() <= b.h() / 2.0 + slack
}

/// Minimum total cost over all injective row→column maps, enumerated in
/// lexicographic order; the first optimum found is returned.
pub fn brute_force_assignment(cost: &Matrix) -> (f64, Vec<usize>) {
    let (m, n) = cost.dim();
    let mut best = (f64::INFINITY, Vec::new());
    let mut cur = Vec::with_capacity(m);
    let mut used = vec![false; n];
    fn rec(
        cost: &Matrix,
        row: usize,
        acc: f64,
        cur: &mut Vec<usize>,
        used: &mut [bool],
        best: &mut (f64, Vec<usize>),
    ) {
        if row == cost.nrows() {
            if acc < best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        for j in 0..cost.ncols() {
            if used[j] {
                continue;
            }
            used[j] = true;
            cur.push(j);
            rec(cost, row + 1, acc + cost[[row, j]], cur, used, best);
            cur.pop();
            used[j] = false;
        }
    }
    rec(cost, 0, 0.0, &mut cur, &mut used, &mut best);
    let _ = m;
    best
}

/// Symmetric contrastive loss written as explicit sums of exponentials.
pub fn contrastive_direct(z: &Matrix, o: &Matrix, tau: f64) -> f64 {
    let m = z.nrows();
    let dot = |a: &Matrix, i: usize, b: &Matrix, k: usize| -> f64 {
        (0..a.ncols()).map(|d| a[[i, d]] * b[[k, d]]).sum::<f64>() / tau
    };
    let mut total = 0.0;
    for i in 0..m {
        let row: f64 = (0..m).map(|k| dot(z, i, o, k).exp()).sum();
        let col: f64 = (0..m).map(|k| dot(o, i, z, k).exp()).sum();
        let pos = dot(z, i, o, i).exp();
        total += -(pos / row).ln() - (pos / col).ln();
    }
    2.0 * tau / m as f64 * total
}

/// Unit-norm rows.
pub fn normalize_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut r in out.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    out
}

/// Row standardization with the population variance and `eps` inside the
/// square root, as many times as requested.
pub fn standardize_rows(x: &Matrix, eps: f64, times: usize) -> Matrix {
    let mut out = x.clone();
    for _ in 0..times {
        for mut r in out.rows_mut() {
            let n = r.len() as f64;
            let mean = r.sum() / n;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            r.mapv_inplace(|v| (v - mean) * inv);
        }
    }
    out
}

/// Top-`k` eigenvectors (columns) of the sample covariance.
pub fn covariance_eigenvectors(x: &Matrix, k: usize) -> DMatrix<f64> {
    let (n, d) = x.dim();
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in 0..n {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (x[[r, i]] - mean[i]) * (x[[r, j]] - mean[j]);
            }
        }
    }
    cov /= (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    DMatrix::from_fn(d, k, |i, j| eig.eigenvectors[(i, order[j])])
}

/// Largest principal angle between the column spans of two orthonormal
/// bases, computed as `asin‖(I − AAᵀ)B‖₂`.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let residual = b - a * (a.transpose() * b);
    let s = residual.singular_values().max();
    s.min(1.0).asin()
}

/// Dataset, pseudo-labels and training items for one run configuration.
pub fn prepared_items(dir: &Path, seed: u64, count: usize, max_objects: usize, cfg: &RunConfig) -> (Detector, Vec<TrainItem>) {
    let d = &cfg.detector;
    harness::generate_dataset(dir, seed, count, max_objects, d.image_size).expect("dataset");
    let dataset = harness::load_dataset(dir).expect("load dataset");
    let det = Detector::new(d.clone()).expect("detector");
    let prep = PrepConfig {
        emb_dim: d.dim,
        k_cls: d.k_cls,
        kmeans_iters: 100,
        seed,
    };
    let labels = harness::prepare_dataset_labels(&dataset, det.backbone(), prep).expect("labels");
    let items = harness::training_items(&det, &dataset, &labels.sets).expect("items");
    (det, items)
}
