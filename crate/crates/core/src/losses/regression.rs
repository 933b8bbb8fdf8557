//! Box regression: L1 plus generalized IoU on axis-aligned `(cx, cy, w, h)`.
//! The angle of a box never enters these terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{aa_giou, OrientedBox, XywhBox};
use crate::nn::{Graph, Matrix, Var};

use super::hungarian::MatchAssignment;
use super::LossTerm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionWeights {
    pub l1: f64,
    pub giou: f64,
}

impl Default for RegressionWeights {
    fn default() -> Self {
        Self { l1: 5.0, giou: 2.0 }
    }
}

/// `1 − GIoU(p, t)` and its gradient with respect to `p = (cx, cy, w, h)`.
pub(crate) fn giou_loss_grad(p: &XywhBox, t: &XywhBox) -> (f64, [f64; 4]) {
    let value = 1.0 - aa_giou(p, t);
    let (px1, px2) = (p[0] - p[2] / 2.0, p[0] + p[2] / 2.0);
    let (py1, py2) = (p[1] - p[3] / 2.0, p[1] + p[3] / 2.0);
    let (tx1, tx2) = (t[0] - t[2] / 2.0, t[0] + t[2] / 2.0);
    let (ty1, ty2) = (t[1] - t[3] / 2.0, t[1] + t[3] / 2.0);
    let iw = (px2.min(tx2) - px1.max(tx1)).max(0.0);
    let ih = (py2.min(ty2) - py1.max(ty1)).max(0.0);
    let inter = iw * ih;
    let area_p = (px2 - px1) * (py2 - py1);
    let area_t = (tx2 - tx1) * (ty2 - ty1);
    let union = area_p + area_t - inter;
    let cw = px2.max(tx2) - px1.min(tx1);
    let ch = py2.max(ty2) - py1.min(ty1);
    let enclosure = cw * ch;

    let d_inter = 1.0 / union + inter / (union * union) - 1.0 / enclosure;
    let d_area = -inter / (union * union) + 1.0 / enclosure;
    let d_encl = -union / (enclosure * enclosure);

    // Partials of the giou with respect to the four edges.
    let overlapping = iw > 0.0 && ih > 0.0;
    let edge = |lo: bool, p_edge: f64, t_edge: f64, other_inter: f64, other_side: f64, other_encl: f64| {
        let sign = if lo { -1.0 } else { 1.0 };
        let pred_bounds_inter = if lo { p_edge >= t_edge } else { p_edge <= t_edge };
        let pred_bounds_encl = if lo { p_edge <= t_edge } else { p_edge >= t_edge };
        let di = if overlapping && pred_bounds_inter { sign * other_inter } else { 0.0 };
        let da = sign * other_side;
        let dc = if pred_bounds_encl { sign * other_encl } else { 0.0 };
        d_inter * di + d_area * da + d_encl * dc
    };
    let gx1 = edge(true, px1, tx1, ih, py2 - py1, ch);
    let gx2 = edge(false, px2, tx2, ih, py2 - py1, ch);
    let gy1 = edge(true, py1, ty1, iw, px2 - px1, cw);
    let gy2 = edge(false, py2, ty2, iw, px2 - px1, cw);
    // value = 1 − giou, edges x1 = cx − w/2, x2 = cx + w/2.
    let grad = [
        -(gx1 + gx2),
        -(gy1 + gy2),
        -(gx2 - gx1) / 2.0,
        -(gy2 - gy1) / 2.0,
    ];
    (value, grad)
}

fn pred_box(pred: &Matrix, r: usize) -> XywhBox {
    [pred[[r, 0]], pred[[r, 1]], pred[[r, 2]], pred[[r, 3]]]
}

fn check(pred: &Matrix, gt: &[OrientedBox], assignment: &MatchAssignment) -> Result<()> {
    if pred.ncols() < 4 {
        return Err(Error::invalid(format!(
            "regression: predicted boxes need 4 columns, got {}",
            pred.ncols()
        )));
    }
    for &(a, p) in &assignment.pairs {
        if a >= gt.len() || p >= pred.nrows() {
            return Err(Error::invalid("regression: assignment index out of range"));
        }
    }
    Ok(())
}

fn value_and_grad(
    pred: &Matrix,
    gt: &[OrientedBox],
    assignment: &MatchAssignment,
    w: RegressionWeights,
) -> (f64, Matrix) {
    let m = assignment.len() as f64;
    let mut grad = Matrix::zeros(pred.dim());
    let mut total = 0.0;
    for &(a, p) in &assignment.pairs {
        let b = pred_box(pred, p);
        let t = gt[a].xywh();
        let (g_val, g_grad) = giou_loss_grad(&b, &t);
        let mut l1 = 0.0;
        for d in 0..4 {
            let diff = b[d] - t[d];
            l1 += diff.abs();
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[[p, d]] += (w.l1 * sign + w.giou * g_grad[d]) / m;
        }
        total += w.l1 * l1 + w.giou * g_val;
    }
    (total / m, grad)
}

/// Mean over matched pairs of `λ_L1·‖b̂−b‖₁ + λ_giou·(1 − GIoU(b̂, b))`.
/// Only the first four columns of `pred` are read.
pub fn reg_loss(
    pred: &Matrix,
    gt: &[OrientedBox],
    assignment: &MatchAssignment,
    w: RegressionWeights,
) -> Result<LossTerm> {
    check(pred, gt, assignment)?;
    if assignment.is_empty() {
        return Ok(LossTerm::empty());
    }
    Ok(LossTerm::new(value_and_grad(pred, gt, assignment, w).0))
}

pub fn reg_node(
    g: &mut Graph,
    pred: Var,
    gt: &[OrientedBox],
    assignment: &MatchAssignment,
    w: RegressionWeights,
) -> Result<Var> {
    check(g.value(pred), gt, assignment)?;
    if assignment.is_empty() {
        return Ok(g.constant_scalar(0.0));
    }
    let (value, grad) = value_and_grad(g.value(pred), gt, assignment, w);
    Ok(g.scalar_op(value, vec![(pred, grad)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_to_one() -> MatchAssignment {
        MatchAssignment {
            pairs: vec![(0, 0)],
            unmatched: vec![],
        }
    }

    #[test]
    fn perfect_box_costs_nothing() {
        let gt = [OrientedBox::new(0.5, 0.5, 0.2, 0.1, 0.3).unwrap()];
        let pred = array![[0.5, 0.5, 0.2, 0.1]];
        let l = reg_loss(&pred, &gt, &one_to_one(), RegressionWeights::default()).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn touching_unit_boxes() {
        let gt = [OrientedBox::new(1.5, 0.5, 1.0, 1.0, 0.0).unwrap()];
        let pred = array![[0.5, 0.5, 1.0, 1.0]];
        let w = RegressionWeights::default();
        let l = reg_loss(&pred, &gt, &one_to_one(), w).unwrap();
        assert!((l.value - (w.l1 * 1.0 + w.giou * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn giou_gradient_matches_differences() {
        let cases = [
            ([0.4, 0.5, 0.3, 0.2], [0.5, 0.45, 0.25, 0.32]),
            ([0.2, 0.2, 0.1, 0.1], [0.7, 0.6, 0.2, 0.3]),
            ([0.5, 0.5, 0.4, 0.4], [0.52, 0.47, 0.1, 0.15]),
        ];
        for (p, t) in cases {
            let (_, ana) = giou_loss_grad(&p, &t);
            for d in 0..4 {
                let h = 1e-6;
                let mut a = p;
                let mut b = p;
                a[d] += h;
                b[d] -= h;
                let num = (giou_loss_grad(&a, &t).0 - giou_loss_grad(&b, &t).0) / (2.0 * h);
                assert!((num - ana[d]).abs() < 1e-7, "{p:?} d={d}: {num} vs {}", ana[d]);
            }
        }
    }

    #[test]
    fn empty_matching_flagged() {
        let pred = array![[0.5, 0.5, 0.2, 0.1]];
        let l = reg_loss(&pred, &[], &MatchAssignment::default(), RegressionWeights::default()).unwrap();
        assert!(l.empty);
    }
}
