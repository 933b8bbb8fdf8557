//! Sigmoid focal loss over per-class logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softplus, sigmoid, Graph, Matrix, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

/// Binary focal term for one logit and its derivative with respect to the
/// logit: `−α(1−p)^γ log p` for positives, `−(1−α)p^γ log(1−p)` otherwise.
pub fn focal_element(x: f64, positive: bool, fp: FocalParams) -> (f64, f64) {
    let p = sigmoid(x);
    let FocalParams { alpha, gamma } = fp;
    if positive {
        let log_p = -softplus(-x);
        let q = 1.0 - p;
        let value = -alpha * q.powf(gamma) * log_p;
        let grad = alpha * q.powf(gamma) * (gamma * p * log_p - q);
        (value, grad)
    } else {
        let log_q = -softplus(x);
        let value = -(1.0 - alpha) * p.powf(gamma) * log_q;
        let grad = (1.0 - alpha) * p.powf(gamma) * (p - gamma * (1.0 - p) * log_q);
        (value, grad)
    }
}

fn check_targets(logits: &Matrix, targets: &[Option<usize>]) -> Result<()> {
    if targets.len() != logits.nrows() {
        return Err(Error::invalid(format!(
            "focal loss: {} targets for {} predictions",
            targets.len(),
            logits.nrows()
        )));
    }
    if let Some(c) = targets.iter().flatten().find(|&&c| c >= logits.ncols()) {
        return Err(Error::invalid(format!("class {c} out of range")));
    }
    Ok(())
}

fn value_and_grad(logits: &Matrix, targets: &[Option<usize>], fp: FocalParams) -> (f64, Matrix) {
    let matched = targets.iter().filter(|t| t.is_some()).count().max(1) as f64;
    let mut grad = Matrix::zeros(logits.dim());
    let mut total = 0.0;
    for (r, t) in targets.iter().enumerate() {
        for c in 0..logits.ncols() {
            let (v, d) = focal_element(logits[[r, c]], *t == Some(c), fp);
            total += v;
            grad[[r, c]] = d / matched;
        }
    }
    (total / matched, grad)
}

/// Focal loss summed over every element and normalized by the number of
/// matched predictions. `targets[r]` is the class of the annotation matched
/// to prediction `r`, or `None` for background.
pub fn focal_loss(logits: &Matrix, targets: &[Option<usize>], fp: FocalParams) -> Result<f64> {
    check_targets(logits, targets)?;
    Ok(value_and_grad(logits, targets, fp).0)
}

pub fn focal_node(g: &mut Graph, logits: Var, targets: &[Option<usize>], fp: FocalParams) -> Result<Var> {
    check_targets(g.value(logits), targets)?;
    let (value, grad) = value_and_grad(g.value(logits), targets, fp);
    Ok(g.scalar_op(value, vec![(logits, grad)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn half_probability_positive() {
        let (v, _) = focal_element(0.0, true, FocalParams::default());
        assert!((v - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((v - 0.04332).abs() < 1e-5);
    }

    #[test]
    fn confident_correct_predictions_cost_nothing() {
        let logits = array![[800.0, -800.0], [-800.0, -800.0]];
        let l = focal_loss(&logits, &[Some(0), None], FocalParams::default()).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn positive_loss_decreases_in_probability() {
        let fp = FocalParams::default();
        let mut prev = f64::INFINITY;
        for k in -40..40 {
            let x = k as f64 * 0.25;
            let (v, d) = focal_element(x, true, fp);
            assert!(v < prev);
            assert!(d < 0.0);
            prev = v;
        }
    }

    #[test]
    fn element_gradient_matches_difference_quotient() {
        let fp = FocalParams { alpha: 0.3, gamma: 1.5 };
        for &x in &[-3.0, -0.4, 0.2, 2.5] {
            for pos in [true, false] {
                let h = 1e-6;
                let num = (focal_element(x + h, pos, fp).0 - focal_element(x - h, pos, fp).0) / (2.0 * h);
                let (_, ana) = focal_element(x, pos, fp);
                assert!((num - ana).abs() < 1e-8, "x={x} pos={pos}: {num} vs {ana}");
            }
        }
    }

    #[test]
    fn normalized_by_matched_count() {
        let fp = FocalParams::default();
        let logits = array![[0.0], [0.0], [0.0]];
        let one = focal_loss(&logits, &[Some(0), None, None], fp).unwrap();
        let two = focal_loss(&logits, &[Some(0), Some(0), None], fp).unwrap();
        let (pos, _) = focal_element(0.0, true, fp);
        let (neg, _) = focal_element(0.0, false, fp);
        assert!((one - (pos + 2.0 * neg)).abs() < 1e-15);
        assert!((two - (2.0 * pos + neg) / 2.0).abs() < 1e-15);
        assert!(focal_loss(&logits, &[Some(1), None, None], fp).is_err());
    }
}
