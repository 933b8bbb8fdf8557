//! Calibration losses that tie the plain-feature path to the enhanced one.
//! The enhanced side always acts as a teacher and receives no gradient.

use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus, Graph, Matrix, Var};

pub const DEFAULT_QFL_BETA: f64 = 2.0;

fn same_shape(what: &str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Mean squared error between `student` and `teacher`, with gradient for the
/// student only.
fn mse_value_grad(student: &Matrix, teacher: &Matrix) -> (f64, Matrix) {
    let n = student.len().max(1) as f64;
    let diff = student - teacher;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (value, diff * (2.0 / n))
}

/// Feature distillation `mean((F − F_enh)²)`.
pub fn encoder_feature_distill(f: &Matrix, f_enh: &Matrix) -> Result<f64> {
    same_shape("encoder_feature_distill", f, f_enh)?;
    Ok(mse_value_grad(f, f_enh).0)
}

pub fn encoder_feature_distill_node(g: &mut Graph, f: Var, f_enh: Var) -> Result<Var> {
    same_shape("encoder_feature_distill", g.value(f), g.value(f_enh))?;
    let (value, grad) = mse_value_grad(g.value(f), g.value(f_enh));
    Ok(g.scalar_op(value, vec![(f, grad)]))
}

/// Quality-focal soft-target term for one logit against a teacher
/// probability: `BCE(σ(x), t)·|t − σ(x)|^β`, with its derivative in `x`.
pub fn quality_focal_element(x: f64, t: f64, beta: f64) -> (f64, f64) {
    let p = sigmoid(x);
    let bce = softplus(x) - t * x;
    let gap = (p - t).abs();
    let weight = gap.powf(beta);
    let d_weight = if gap > 0.0 {
        beta * gap.powf(beta - 1.0) * (p - t).signum() * p * (1.0 - p)
    } else {
        0.0
    };
    (bce * weight, (p - t) * weight + bce * d_weight)
}

/// Value of the cross-branch distillation and the gradients for the student
/// logits and student embeddings.
fn cross_value_grad(
    student_logits: &Matrix,
    teacher_logits: &Matrix,
    student_emb: &Matrix,
    teacher_emb: &Matrix,
    beta: f64,
) -> (f64, Matrix, Matrix) {
    let n = student_logits.nrows().max(1) as f64;
    let mut g_logits = Matrix::zeros(student_logits.dim());
    let mut qfl = 0.0;
    for ((&x, &tl), gx) in student_logits
        .iter()
        .zip(teacher_logits.iter())
        .zip(g_logits.iter_mut())
    {
        let (v, d) = quality_focal_element(x, sigmoid(tl), beta);
        qfl += v;
        *gx = d / n;
    }
    let diff = student_emb - teacher_emb;
    let l2 = diff.iter().map(|d| d * d).sum::<f64>();
    (qfl / n + l2 / n, g_logits, diff * (2.0 / n))
}

/// Decoder cross distillation: quality-focal loss of the plain-branch class
/// logits against the enhanced-branch probabilities, plus the squared
/// distance between the two branches' embeddings, both divided by the number
/// of queries.
pub fn decoder_cross_distill(
    student_logits: &Matrix,
    teacher_logits: &Matrix,
    student_emb: &Matrix,
    teacher_emb: &Matrix,
    beta: f64,
) -> Result<f64> {
    same_shape("decoder_cross_distill logits", student_logits, teacher_logits)?;
    same_shape("decoder_cross_distill embeddings", student_emb, teacher_emb)?;
    Ok(cross_value_grad(student_logits, teacher_logits, student_emb, teacher_emb, beta).0)
}

pub fn decoder_cross_distill_node(
    g: &mut Graph,
    student_logits: Var,
    teacher_logits: Var,
    student_emb: Var,
    teacher_emb: Var,
    beta: f64,
) -> Result<Var> {
    same_shape(
        "decoder_cross_distill logits",
        g.value(student_logits),
        g.value(teacher_logits),
    )?;
    same_shape(
        "decoder_cross_distill embeddings",
        g.value(student_emb),
        g.value(teacher_emb),
    )?;
    let (value, gl, ge) = cross_value_grad(
        g.value(student_logits),
        g.value(teacher_logits),
        g.value(student_emb),
        g.value(teacher_emb),
        beta,
    );
    Ok(g.scalar_op(value, vec![(student_logits, gl), (student_emb, ge)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_inputs_cost_nothing() {
        let f = array![[0.3, -1.0], [2.0, 0.5]];
        assert_eq!(encoder_feature_distill(&f, &f).unwrap(), 0.0);
        assert_eq!(decoder_cross_distill(&f, &f, &f, &f, DEFAULT_QFL_BETA).unwrap(), 0.0);
    }

    #[test]
    fn teacher_receives_no_gradient() {
        let mut g = Graph::new();
        let f = g.input(array![[0.3, -1.0], [2.0, 0.5]]);
        let t = g.input(array![[0.0, 1.0], [1.0, 0.0]]);
        let l = encoder_feature_distill_node(&mut g, f, t).unwrap();
        let grads = g.backward(l);
        assert!(grads.wrt(t).is_none_or(|m| m.iter().all(|&v| v == 0.0)));
        assert!(grads.wrt(f).is_some());
    }

    #[test]
    fn quality_focal_derivative() {
        for &(x, t) in &[(-1.0, 0.2), (0.7, 0.9), (2.0, 0.1)] {
            let h = 1e-6;
            let num = (quality_focal_element(x + h, t, 2.0).0 - quality_focal_element(x - h, t, 2.0).0)
                / (2.0 * h);
            let ana = quality_focal_element(x, t, 2.0).1;
            assert!((num - ana).abs() < 1e-8);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Matrix::zeros((2, 3));
        let b = Matrix::zeros((3, 2));
        assert!(encoder_feature_distill(&a, &b).is_err());
    }
}
