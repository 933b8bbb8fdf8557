//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub centroids: Matrix,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lowest index.
fn nearest(centroids: &Matrix, v: ndarray::ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Index of the centroid closest to `v`.
pub fn assign_cluster(m: &KMeansModel, v: &[f64]) -> Result<usize> {
    if v.len() != m.centroids.ncols() {
        return Err(Error::invalid(format!(
            "cluster assignment: expected {} dims, got {}",
            m.centroids.ncols(),
            v.len()
        )));
    }
    Ok(nearest(&m.centroids, ndarray::ArrayView1::from(v)).0)
}

fn plus_plus_seed(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = x.nrows();
    let mut centroids = Matrix::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    chosen = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            chosen.unwrap_or(0)
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, r) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, x.row(pick)));
        }
    }
    centroids
}

/// Clusters the rows of `x` into `k` groups.
pub fn kmeans_fit(x: &Matrix, k: usize, max_iters: usize, seed: u64) -> Result<KMeansModel> {
    let n = x.nrows();
    if k == 0 {
        return Err(Error::invalid("k-means needs k ≥ 1"));
    }
    if n < k {
        return Err(Error::InsufficientData(format!(
            "k-means with k = {k} needs at least {k} points, got {n}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("k-means input contains non-finite values"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seed(x, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();

    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dists = vec![0.0; n];
        for (i, r) in x.rows().into_iter().enumerate() {
            let (j, d) = nearest(&centroids, r);
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
            dists[i] = d;
            inertia += d;
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (i, r) in x.rows().into_iter().enumerate() {
            sums.row_mut(labels[i]).scaled_add(1.0, &r);
            counts[labels[i]] += 1;
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                let mean = &sums.row(j) / counts[j] as f64;
                centroids.row_mut(j).assign(&mean);
            } else {
                // Re-seed from the point farthest from its centroid.
                let mut far = None;
                for i in 0..n {
                    if !taken[i] && far.is_none_or(|f: usize| dists[i] > dists[f]) {
                        far = Some(i);
                    }
                }
                let i = far.unwrap_or(0);
                taken[i] = true;
                dists[i] = 0.0;
                centroids.row_mut(j).assign(&x.row(i));
            }
        }
    }

    let inertia = x.rows().into_iter().map(|r| nearest(&centroids, r).1).sum();
    Ok(KMeansModel {
        centroids,
        inertia,
        inertia_history: history,
    })
}
