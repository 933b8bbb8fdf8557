//! Circular-smooth-label angle classification.
//!
//! The angle range `[-π/2, π/2)` is split into equal bins. The target puts
//! 1 on the bin containing the angle and decays with a truncated Gaussian
//! window that wraps around the ends of the range.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus, Graph, Matrix, Var};

use super::hungarian::MatchAssignment;
use super::LossTerm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CslWindow {
    /// Standard deviation in bins.
    pub sigma: f64,
    /// Bins beyond this circular distance from the peak are zero.
    pub radius: usize,
}

impl Default for CslWindow {
    fn default() -> Self {
        Self {
            sigma: 4.0,
            radius: 12,
        }
    }
}

/// Bin index of a canonical angle.
pub fn angle_bin(angle: f64, bins: usize) -> usize {
    let t = (angle + FRAC_PI_2) / PI * bins as f64;
    (t.floor().max(0.0) as usize).min(bins - 1)
}

/// Smoothed target vector for `angle` over `bins` bins.
pub fn csl_target(angle: f64, bins: usize, window: CslWindow) -> Vec<f64> {
    let peak = angle_bin(angle, bins);
    let mut t = vec![0.0; bins];
    let reach = window.radius.min(bins / 2);
    let two_var = 2.0 * window.sigma * window.sigma;
    t[peak] = 1.0;
    for d in 1..=reach {
        let w = (-((d * d) as f64) / two_var).exp();
        t[(peak + d) % bins] = w;
        t[(peak + bins - d) % bins] = w;
    }
    t
}

/// Mean binary cross-entropy of `logits` against `target`, with gradient.
pub(crate) fn bce_row(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let mut v = 0.0;
    let mut g = Vec::with_capacity(logits.len());
    for (&x, &t) in logits.iter().zip(target) {
        v += softplus(x) - t * x;
        g.push((sigmoid(x) - t) / n);
    }
    (v / n, g)
}

fn check(logits: &Matrix, gt_angles: &[f64], assignment: &MatchAssignment) -> Result<()> {
    for &(a, p) in &assignment.pairs {
        if a >= gt_angles.len() || p >= logits.nrows() {
            return Err(Error::invalid("angle loss: assignment index out of range"));
        }
    }
    Ok(())
}

fn value_and_grad(
    logits: &Matrix,
    gt_angles: &[f64],
    assignment: &MatchAssignment,
    window: CslWindow,
) -> (f64, Matrix) {
    let bins = logits.ncols();
    let m = assignment.len() as f64;
    let mut grad = Matrix::zeros(logits.dim());
    let mut total = 0.0;
    for &(a, p) in &assignment.pairs {
        let target = csl_target(gt_angles[a], bins, window);
        let row: Vec<f64> = logits.row(p).to_vec();
        let (v, g) = bce_row(&row, &target);
        total += v;
        for (c, gv) in g.into_iter().enumerate() {
            grad[[p, c]] += gv / m;
        }
    }
    (total / m, grad)
}

/// Angle classification loss averaged over matched predictions.
pub fn angle_csl_loss(
    logits: &Matrix,
    gt_angles: &[f64],
    assignment: &MatchAssignment,
    window: CslWindow,
) -> Result<LossTerm> {
    check(logits, gt_angles, assignment)?;
    if assignment.is_empty() {
        return Ok(LossTerm::empty());
    }
    Ok(LossTerm::new(value_and_grad(logits, gt_angles, assignment, window).0))
}

pub fn angle_node(
    g: &mut Graph,
    logits: Var,
    gt_angles: &[f64],
    assignment: &MatchAssignment,
    window: CslWindow,
) -> Result<Var> {
    check(g.value(logits), gt_angles, assignment)?;
    if assignment.is_empty() {
        return Ok(g.constant_scalar(0.0));
    }
    let (value, grad) = value_and_grad(g.value(logits), gt_angles, assignment, window);
    Ok(g.scalar_op(value, vec![(logits, grad)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_peak_and_symmetry() {
        let w = CslWindow::default();
        for &a in &[-FRAC_PI_2, -1.0, 0.0, 0.3, 1.5] {
            let t = csl_target(a, 180, w);
            let peak = angle_bin(a, 180);
            assert_eq!(t[peak], 1.0);
            for d in 1..90 {
                assert_eq!(t[(peak + d) % 180], t[(peak + 180 - d) % 180]);
            }
            assert_eq!(t[(peak + 13) % 180], 0.0);
            assert!(t[(peak + 12) % 180] > 0.0);
        }
    }

    #[test]
    fn bins_cover_range() {
        assert_eq!(angle_bin(-FRAC_PI_2, 180), 0);
        assert_eq!(angle_bin(0.0, 180), 90);
        assert_eq!(angle_bin(FRAC_PI_2 - 1e-12, 180), 179);
    }

    #[test]
    fn empty_matching_is_flagged() {
        let logits = Matrix::zeros((3, 180));
        let l = angle_csl_loss(&logits, &[], &MatchAssignment::default(), CslWindow::default()).unwrap();
        assert!(l.empty);
        assert_eq!(l.value, 0.0);
    }
}
