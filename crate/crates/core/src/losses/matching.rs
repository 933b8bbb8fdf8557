//! Matching cost between predictions and annotations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{aa_giou, OrientedBox};
use crate::nn::{sigmoid, Matrix};

use super::angle::{csl_target, CslWindow};
use super::focal::{focal_element, FocalParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    pub ang: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self {
            cls: 2.0,
            l1: 5.0,
            giou: 2.0,
            ang: 0.5,
        }
    }
}

/// Raw head outputs for one set of `N` predictions.
#[derive(Debug, Clone, Copy)]
pub struct Predictions<'a> {
    /// `N×K_cls` class logits.
    pub class_logits: &'a Matrix,
    /// `N×4` normalized `(cx, cy, w, h)`.
    pub boxes: &'a Matrix,
    /// `N×A_bins` angle logits.
    pub angle_logits: &'a Matrix,
}

/// Pseudo-label annotations of one image in normalized coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Annotations<'a> {
    pub boxes: &'a [OrientedBox],
    pub classes: &'a [usize],
}

impl Annotations<'_> {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// `M×N` matching cost: focal class cost, L1 and GIoU box costs (angle
/// excluded) and the mean absolute gap between the smoothed angle target and
/// the predicted angle probabilities.
pub fn match_cost(
    preds: Predictions<'_>,
    gts: Annotations<'_>,
    w: MatchWeights,
    focal: FocalParams,
    window: CslWindow,
) -> Result<Matrix> {
    let n = preds.boxes.nrows();
    if preds.class_logits.nrows() != n || preds.angle_logits.nrows() != n || preds.boxes.ncols() < 4 {
        return Err(Error::invalid("match_cost: inconsistent prediction shapes"));
    }
    if gts.classes.len() != gts.boxes.len() {
        return Err(Error::invalid("match_cost: boxes and classes differ in length"));
    }
    let k = preds.class_logits.ncols();
    if let Some(c) = gts.classes.iter().find(|&&c| c >= k) {
        return Err(Error::invalid(format!("match_cost: class {c} out of range")));
    }
    let bins = preds.angle_logits.ncols();
    let probs = preds.angle_logits.mapv(sigmoid);
    let mut cost = Matrix::zeros((gts.len(), n));
    for (i, (gt, &cls)) in gts.boxes.iter().zip(gts.classes).enumerate() {
        let t = gt.xywh();
        let target = csl_target(gt.angle(), bins, window);
        for j in 0..n {
            let x = preds.class_logits[[j, cls]];
            let cls_cost = focal_element(x, true, focal).0 - focal_element(x, false, focal).0;
            let b = [
                preds.boxes[[j, 0]],
                preds.boxes[[j, 1]],
                preds.boxes[[j, 2]],
                preds.boxes[[j, 3]],
            ];
            let l1: f64 = (0..4).map(|d| (b[d] - t[d]).abs()).sum();
            let giou = aa_giou(&b, &t);
            let ang: f64 = target
                .iter()
                .zip(probs.row(j))
                .map(|(a, p)| (a - p).abs())
                .sum::<f64>()
                / bins as f64;
            cost[[i, j]] = w.cls * cls_cost + w.l1 * l1 + w.giou * (1.0 - giou) + w.ang * ang;
        }
    }
    Ok(cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::hungarian;
    use ndarray::Array2;

    #[test]
    fn swapped_predictions_are_recovered() {
        let a = OrientedBox::new(0.25, 0.25, 0.2, 0.1, 0.0).unwrap();
        let b = OrientedBox::new(0.7, 0.6, 0.1, 0.3, 0.5).unwrap();
        let boxes = ndarray::array![[0.7, 0.6, 0.1, 0.3], [0.25, 0.25, 0.2, 0.1]];
        let cls = Array2::zeros((2, 4));
        let ang = Array2::zeros((2, 180));
        let preds = Predictions {
            class_logits: &cls,
            boxes: &boxes,
            angle_logits: &ang,
        };
        let gts = Annotations {
            boxes: &[a, b],
            classes: &[1, 2],
        };
        let c = match_cost(preds, gts, MatchWeights::default(), FocalParams::default(), CslWindow::default())
            .unwrap();
        assert!(c.iter().all(|v| v.is_finite()));
        assert_eq!(hungarian(&c).unwrap().predictions(), vec![1, 0]);
    }
}
