//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Denominator floor in `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Check at most this many coordinates per tensor (all when `None`).
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-4,
            tol: 1e-6,
            floor: 1e-8,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name, flat index, analytic and numeric value at the worst
    /// coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
    /// Coordinates whose central stencil straddles a kink and that were
    /// compared against one-sided differences instead.
    pub nonsmooth: usize,
    pub passed: bool,
}

fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares the analytic gradient of a scalar loss against the five-point
/// central difference
/// `(8(f(θ+h) − f(θ−h)) − (f(θ+2h) − f(θ−2h))) / 12h`, coordinate by
/// coordinate.
///
/// A coordinate whose estimates at `h` and `h/2` disagree lies near a
/// non-differentiable point (a ReLU or absolute-value kink). There the
/// analytic value must instead match one of the second-order one-sided
/// differences with step `h/8`, i.e. the derivative on the side of the
/// kink the point lies on.
///
/// `loss` builds a fresh graph from the current store and returns it with
/// its scalar root. Inputs whose gradients should be checked are placed in
/// the store alongside ordinary parameters.
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    mut loss: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Graph, Var)>,
{
    store.zero_grads();
    let (graph, root) = loss(store)?;
    let grads = graph.backward(root);
    grads.accumulate_params(&graph, store, 1.0);
    drop(graph);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    let mut nonsmooth = 0;
    for &id in params {
        let n = store.value(id).len();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for flat in coords {
            let analytic = store.grad(id).as_slice().expect("contiguous")[flat];
            let original = store.value(id).as_slice().expect("contiguous")[flat];
            let mut f = |offset: f64| -> Result<f64> {
                store.value_mut(id).as_slice_mut().expect("contiguous")[flat] = original + offset;
                let (g, r) = loss(store)?;
                Ok(g.scalar(r))
            };
            let five_point = |f: &mut dyn FnMut(f64) -> Result<f64>, h: f64| -> Result<f64> {
                let (p1, m1, p2, m2) = (f(h)?, f(-h)?, f(2.0 * h)?, f(-2.0 * h)?);
                Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
            };
            let h = opts.h;
            let coarse = five_point(&mut f, h)?;
            let fine = five_point(&mut f, h / 2.0)?;
            let (numeric, rel) = if rel_error(coarse, fine, opts.floor) <= opts.tol {
                (coarse, rel_error(analytic, coarse, opts.floor))
            } else {
                nonsmooth += 1;
                let d = h / 8.0;
                let centre = f(0.0)?;
                let right = (-3.0 * centre + 4.0 * f(d)? - f(2.0 * d)?) / (2.0 * d);
                let left = (3.0 * centre - 4.0 * f(-d)? + f(-2.0 * d)?) / (2.0 * d);
                let (rl, rr) = (rel_error(analytic, left, opts.floor), rel_error(analytic, right, opts.floor));
                if rl <= rr {
                    (left, rl)
                } else {
                    (right, rr)
                }
            };
            store.value_mut(id).as_slice_mut().expect("contiguous")[flat] = original;
            checked += 1;
            if rel > max_rel || worst.is_none() {
                max_rel = max_rel.max(rel);
                worst = Some((store.name(id).to_string(), flat, analytic, numeric));
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst,
        checked,
        nonsmooth,
        passed: max_rel < opts.tol,
    })
}
