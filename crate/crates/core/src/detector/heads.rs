//! Prediction heads shared by all rows of a token matrix.

use rand::Rng;

use crate::error::Result;
use crate::losses::HeadVars;
use crate::nn::{Graph, Linear, Matrix, Mlp, ParamStore, Var};

/// Class, box, angle and embedding heads.
#[derive(Debug, Clone)]
pub struct Heads {
    pub class: Linear,
    pub boxes: Mlp,
    pub angle: Linear,
    pub embed: Mlp,
}

impl Heads {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        k_cls: usize,
        a_bins: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            class: Linear::new(store, &format!("{name}.class"), dim, k_cls, rng)?,
            boxes: Mlp::new(store, &format!("{name}.box"), dim, dim, 4, rng)?,
            angle: Linear::new(store, &format!("{name}.angle"), dim, a_bins, rng)?,
            embed: Mlp::new(store, &format!("{name}.embed"), dim, dim, dim, rng)?,
        })
    }

    /// Applies every head to `x`. Box outputs are `sigmoid(raw + prior)`
    /// where `prior` is an optional per-row box logit.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        box_prior: Option<Var>,
    ) -> Result<HeadVars> {
        let class_logits = self.class.forward(g, store, x)?;
        let mut raw = self.boxes.forward(g, store, x)?;
        if let Some(prior) = box_prior {
            raw = g.add(raw, prior);
        }
        let boxes = g.sigmoid(raw);
        let angle_logits = self.angle.forward(g, store, x)?;
        let embeddings = self.embed.forward(g, store, x)?;
        Ok(HeadVars {
            class_logits,
            boxes,
            angle_logits,
            embeddings,
        })
    }
}

/// Rows of `heads` at `idx`, in that order.
pub fn gather_heads(g: &mut Graph, heads: &HeadVars, idx: &[usize]) -> HeadVars {
    HeadVars {
        class_logits: g.gather_rows(heads.class_logits, idx),
        boxes: g.gather_rows(heads.boxes, idx),
        angle_logits: g.gather_rows(heads.angle_logits, idx),
        embeddings: g.gather_rows(heads.embeddings, idx),
    }
}

/// Indices of the `n` rows with the largest maximum logit, best first; ties
/// go to the lower row index.
pub fn select_top(logits: &Matrix, n: usize) -> Vec<usize> {
    let scores: Vec<f64> = logits
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn top_selection() {
        let l = array![[0.0, 1.0], [5.0, -1.0], [1.0, 0.0], [0.5, 0.2]];
        assert_eq!(select_top(&l, 2), vec![1, 0]);
        assert_eq!(select_top(&l, 4), vec![1, 0, 2, 3]);
    }
}
