//! Rectangular linear assignment (Hungarian algorithm with potentials).
//!
//! Rows are annotations and columns are predictions; every row is assigned
//! to a distinct column. Among all optimal assignments the lexicographically
//! smallest sequence of columns is returned.

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// One-to-one matching of annotations (rows) to predictions (columns).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchAssignment {
    /// `(annotation_index, prediction_index)`, ordered by annotation.
    pub pairs: Vec<(usize, usize)>,
    /// Predictions that received no annotation, ascending.
    pub unmatched: Vec<usize>,
}

impl MatchAssignment {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Prediction index per annotation.
    pub fn predictions(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(_, p)| p).collect()
    }

    /// Total cost of the assignment, summed in annotation order.
    pub fn cost(&self, cost: &Matrix) -> f64 {
        self.pairs.iter().map(|&(i, j)| cost[[i, j]]).sum()
    }
}

struct Solution {
    cols: Vec<usize>,
    /// Row potentials, indexed like the solved rows.
    u: Vec<f64>,
    /// Column potentials, indexed like the solved columns.
    v: Vec<f64>,
}

/// Solves the sub-problem restricted to `rows × cols` (`rows.len() ≤ cols.len()`).
/// Returned columns are global column ids.
fn solve(cost: &Matrix, rows: &[usize], cols: &[usize]) -> Solution {
    let n = rows.len();
    let m = cols.len();
    debug_assert!(n <= m);
    let c = |i: usize, j: usize| cost[[rows[i - 1], cols[j - 1]]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = cols[j - 1];
        }
    }
    Solution {
        cols: out,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
    }
}

fn total(cost: &Matrix, rows: &[usize], cols: &[usize]) -> f64 {
    rows.iter().zip(cols).map(|(&i, &j)| cost[[i, j]]).sum()
}

/// Minimum-cost assignment of every row to a distinct column.
pub fn hungarian(cost: &Matrix) -> Result<MatchAssignment> {
    let (m, n) = cost.dim();
    if m > n {
        return Err(Error::invalid(format!(
            "hungarian: {m} annotations exceed {n} predictions"
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("hungarian: non-finite cost entry"));
    }
    if m == 0 {
        return Ok(MatchAssignment {
            pairs: Vec::new(),
            unmatched: (0..n).collect(),
        });
    }
    let scale = cost.iter().fold(1.0f64, |a, c| a.max(c.abs()));
    let tol = 1e-9 * scale;

    let all_rows: Vec<usize> = (0..m).collect();
    let all_cols: Vec<usize> = (0..n).collect();
    let first = solve(cost, &all_rows, &all_cols);
    let mut assigned = first.cols;
    // Potentials of the current sub-problem, keyed by global row/column id.
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    for (k, &r) in all_rows.iter().enumerate() {
        u[r] = first.u[k];
    }
    for (k, &c) in all_cols.iter().enumerate() {
        v[c] = first.v[k];
    }

    // Lexicographic refinement: an edge can belong to some optimal
    // assignment only if it is tight under an optimal dual, so only tight
    // edges to smaller columns trigger a re-solve.
    let mut free_cols: Vec<usize> = all_cols.clone();
    for i in 0..m {
        let current = assigned[i];
        let rest_rows: Vec<usize> = (i + 1..m).collect();
        let best = total(cost, &all_rows[i..], &assigned[i..]);
        for &j in free_cols.iter().take_while(|&&j| j < current) {
            if (cost[[i, j]] - u[i] - v[j]).abs() > tol {
                continue;
            }
            let cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
            let sub = solve(cost, &rest_rows, &cols);
            let candidate = cost[[i, j]] + total(cost, &rest_rows, &sub.cols);
            if candidate <= best + tol {
                assigned.truncate(i);
                assigned.push(j);
                assigned.extend_from_slice(&sub.cols);
                for (k, &r) in rest_rows.iter().enumerate() {
                    u[r] = sub.u[k];
                }
                for (k, &c) in cols.iter().enumerate() {
                    v[c] = sub.v[k];
                }
                break;
            }
        }
        free_cols.retain(|&c| c != assigned[i]);
    }

    let pairs: Vec<(usize, usize)> = assigned.iter().copied().enumerate().collect();
    let mut taken = vec![false; n];
    for &(_, j) in &pairs {
        taken[j] = true;
    }
    Ok(MatchAssignment {
        pairs,
        unmatched: (0..n).filter(|&j| !taken[j]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn diagonal_zeros_give_identity() {
        let c = array![[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
        let a = hungarian(&c).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert!(a.unmatched.is_empty());
    }

    #[test]
    fn three_by_three_example() {
        let c = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        let a = hungarian(&c).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 0), (2, 2)]);
        assert_eq!(a.cost(&c), 5.0);
    }

    #[test]
    fn rectangular_reports_unmatched() {
        let c = array![[5.0, 0.0, 9.0, 1.0]];
        let a = hungarian(&c).unwrap();
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert_eq!(a.unmatched, vec![0, 2, 3]);
    }

    #[test]
    fn ties_resolve_to_lexicographically_smallest() {
        let c = array![[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]];
        assert_eq!(hungarian(&c).unwrap().predictions(), vec![0, 1]);
        let c = array![[0.0, 0.0], [0.0, 0.0]];
        assert_eq!(hungarian(&c).unwrap().predictions(), vec![0, 1]);
        let c = array![[2.0, 1.0, 1.0], [1.0, 2.0, 1.0]];
        // Optima of cost 2: (1,0), (1,2), (2,0); smallest is (1,0).
        assert_eq!(hungarian(&c).unwrap().predictions(), vec![1, 0]);
    }

    #[test]
    fn errors() {
        let c = array![[1.0], [2.0]];
        assert!(hungarian(&c).is_err());
        let c = array![[f64::NAN, 1.0]];
        assert!(hungarian(&c).is_err());
        let c = Matrix::zeros((0, 3));
        let a = hungarian(&c).unwrap();
        assert!(a.is_empty());
        assert_eq!(a.unmatched, vec![0, 1, 2]);
    }
}
