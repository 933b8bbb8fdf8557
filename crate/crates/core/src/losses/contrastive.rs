//! Symmetric temperature-scaled contrastive alignment between index-aligned
//! predicted embeddings `Z` and object embeddings `O`:
//!
//! ```text
//! L(Z, O) = −(2τ/M) Σᵢ [ log softmaxₖ(zᵢ·oₖ/τ)ᵢ + log softmaxₖ(oᵢ·zₖ/τ)ᵢ ]
//! ```
//!
//! Negatives are the other rows of the same set, i.e. the other objects of
//! one image.

use crate::error::{Error, Result};
use crate::nn::{log_sum_exp, Graph, Matrix, Var};

use super::LossTerm;

pub const DEFAULT_TAU: f64 = 0.2;
const UNIT_NORM_TOL: f64 = 1e-6;

/// Value and gradients `(L, ∂L/∂Z, ∂L/∂O)`. Both inputs are `M×C`, `M ≥ 1`.
pub(crate) fn value_and_grad(z: &Matrix, o: &Matrix, tau: f64) -> (f64, Matrix, Matrix) {
    let m = z.nrows();
    let c = z.ncols();
    let mut sim = vec![vec![0.0; m]; m];
    for (i, row) in sim.iter_mut().enumerate() {
        for (k, s) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for d in 0..c {
                acc += z[[i, d]] * o[[k, d]];
            }
            *s = acc / tau;
        }
    }
    let col = |k: usize| -> Vec<f64> { (0..m).map(|i| sim[i][k]).collect() };
    let row_lse: Vec<f64> = sim.iter().map(|r| log_sum_exp(r)).collect();
    let col_lse: Vec<f64> = (0..m).map(|k| log_sum_exp(&col(k))).collect();

    let mut acc = 0.0;
    for i in 0..m {
        acc += (row_lse[i] - sim[i][i]) + (col_lse[i] - sim[i][i]);
    }
    let k = 2.0 * tau / m as f64;
    let value = k * acc;

    // ∂L/∂S[i,k] = (2τ/M)(P_row[i,k] + P_col[i,k] − 2δᵢₖ)
    let mut ds = Matrix::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let pr = (sim[i][j] - row_lse[i]).exp();
            let pc = (sim[i][j] - col_lse[j]).exp();
            let delta = if i == j { 2.0 } else { 0.0 };
            ds[[i, j]] = k * (pr + pc - delta) / tau;
        }
    }
    let dz = ds.dot(o);
    let d_o = ds.t().dot(z);
    (value, dz, d_o)
}

fn check_inputs(z: &Matrix, o: &Matrix, tau: f64) -> Result<()> {
    if z.dim() != o.dim() {
        return Err(Error::invalid(format!(
            "contrastive loss: Z is {:?} but O is {:?}",
            z.dim(),
            o.dim()
        )));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    for (name, x) in [("Z", z), ("O", o)] {
        for (r, row) in x.rows().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(format!(
                    "contrastive loss: row {r} of {name} has norm {n}, expected unit norm"
                )));
            }
        }
    }
    Ok(())
}

/// Contrastive alignment loss on unit-norm, index-aligned rows. An empty set
/// yields zero with the `empty` flag raised.
pub fn contrastive_alignment_loss(z: &Matrix, o: &Matrix, tau: f64) -> Result<LossTerm> {
    check_inputs(z, o, tau)?;
    if z.nrows() == 0 {
        return Ok(LossTerm::empty());
    }
    Ok(LossTerm::new(value_and_grad(z, o, tau).0))
}

/// Graph node for the contrastive loss; differentiable in both arguments.
/// Rows must already be normalized (see [`Graph::l2_normalize_rows`]).
pub fn contrastive_node(g: &mut Graph, z: Var, o: Var, tau: f64) -> Result<Var> {
    check_inputs(g.value(z), g.value(o), tau)?;
    if g.value(z).nrows() == 0 {
        return Ok(g.constant_scalar(0.0));
    }
    let (value, dz, d_o) = value_and_grad(g.value(z), g.value(o), tau);
    Ok(g.scalar_op(value, vec![(z, dz), (o, d_o)]))
}

/// Detector alignment term: `L(Ẑ_enc⁺, O_enh) + L(Ẑ_dec⁺, O_enh)`.
pub fn detector_alignment_loss(
    z_enc: &Matrix,
    z_dec: &Matrix,
    o_enh: &Matrix,
    tau: f64,
) -> Result<LossTerm> {
    let enc = contrastive_alignment_loss(z_enc, o_enh, tau)?;
    let dec = contrastive_alignment_loss(z_dec, o_enh, tau)?;
    Ok(LossTerm {
        value: enc.value + dec.value,
        empty: enc.empty && dec.empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_pair_is_exactly_zero() {
        let z = array![[0.6, 0.8]];
        let l = contrastive_alignment_loss(&z, &z, DEFAULT_TAU).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(!l.empty);
    }

    #[test]
    fn empty_set_is_flagged() {
        let z = Matrix::zeros((0, 4));
        let l = contrastive_alignment_loss(&z, &z, DEFAULT_TAU).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.empty);
    }

    #[test]
    fn norm_violation_rejected() {
        let z = array![[1.0, 1.0]];
        let o = array![[1.0, 0.0]];
        assert!(matches!(
            contrastive_alignment_loss(&z, &o, DEFAULT_TAU),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn default_temperature() {
        assert_eq!(DEFAULT_TAU, 0.2);
    }

    #[test]
    fn detector_alignment_is_sum_of_terms() {
        let o = array![[1.0, 0.0], [0.0, 1.0]];
        let z = array![[0.6, 0.8], [0.8, -0.6]];
        let a = contrastive_alignment_loss(&z, &o, 0.2).unwrap().value;
        let b = contrastive_alignment_loss(&o, &o, 0.2).unwrap().value;
        let both = detector_alignment_loss(&z, &o, &o, 0.2).unwrap().value;
        assert_eq!(both, a + b);
    }
}
