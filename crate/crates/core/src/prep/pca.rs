//! Principal component analysis through a thin SVD of the centered data.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Fitted projection. `components` holds one orthonormal row per kept
/// direction in descending order of explained variance; projections are
/// zero-padded to `out_dim` when fewer directions are available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
    pub out_dim: usize,
}

impl PcaModel {
    pub fn in_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn kept(&self) -> usize {
        self.components.nrows()
    }
}

/// Fits `target_dim` principal directions of the rows of `x`.
pub fn pca_fit(x: &Matrix, target_dim: usize) -> Result<PcaModel> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least two samples, got {n}"
        )));
    }
    if target_dim == 0 {
        return Err(Error::invalid("PCA target dimension must be positive"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("PCA input contains non-finite values"));
    }
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| x[[i, j]] - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NumericalFailure {
            iteration: 0,
            batch: 0,
            detail: "SVD did not produce right singular vectors".into(),
        })?;
    let s = &svd.singular_values;
    let s_max = s.iter().copied().fold(0.0, f64::max);
    let tol = s_max * (n.max(d) as f64) * f64::EPSILON;
    let rank = s.iter().filter(|&&v| v > tol).count();
    let kept = rank.min(target_dim);

    let mut components = Matrix::zeros((kept, d));
    for r in 0..kept {
        // Sign convention: the entry of largest magnitude is positive.
        let row = v_t.row(r);
        let mut pivot = 0;
        for j in 1..d {
            if row[j].abs() > row[pivot].abs() {
                pivot = j;
            }
        }
        let sign = if row[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[[r, j]] = sign * row[j];
        }
    }
    let explained_variance = (0..kept).map(|r| s[r] * s[r] / (n - 1) as f64).collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        out_dim: target_dim,
    })
}

/// `components · (v − mean)`, zero-padded to the model's output width.
pub fn pca_project(m: &PcaModel, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != m.in_dim() {
        return Err(Error::invalid(format!(
            "PCA projection: expected {} inputs, got {}",
            m.in_dim(),
            v.len()
        )));
    }
    let mut out = vec![0.0; m.out_dim];
    for (r, o) in out.iter_mut().enumerate().take(m.kept()) {
        *o = m
            .components
            .row(r)
            .iter()
            .zip(v.iter().zip(&m.mean))
            .map(|(c, (x, mu))| c * (x - mu))
            .sum();
    }
    Ok(out)
}
