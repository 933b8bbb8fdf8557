//! Linear maps, layer normalization, the two-layer MLP and multi-head
//! attention, expressed on a [`Graph`].
//!
//! The free functions take already-materialized parameter nodes so they can
//! be tested against plain inputs; the structs own [`ParamId`]s and read
//! them from a [`ParamStore`] during the forward pass.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise affine map `x · Wᵀ + b` with `W: out×in`, `b: 1×out`.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let (xin, (wout, win), bdim) = (g.value(x).ncols(), g.value(w).dim(), g.value(b).dim());
    if xin != win || bdim != (1, wout) {
        return Err(Error::invalid(format!(
            "linear: input width {xin}, weight {wout}x{win}, bias {bdim:?}"
        )));
    }
    let y = g.matmul_bt(x, w);
    Ok(g.add_row(y, b))
}

pub fn layer_norm(g: &mut Graph, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
    let cols = g.value(x).ncols();
    if cols < 2 {
        return Err(Error::invalid("layer_norm needs at least two features"));
    }
    if g.value(gain).dim() != (1, cols) || g.value(bias).dim() != (1, cols) {
        return Err(Error::invalid("layer_norm: affine shape mismatch"));
    }
    Ok(g.layer_norm(x, gain, bias, eps))
}

/// Head count used at a given width: one head per 32 channels, at least one.
pub fn default_heads(dim: usize) -> usize {
    (dim / 32).max(1)
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add_uniform(format!("{name}.weight"), out_dim, in_dim, in_dim, rng)?;
        let bias = store.add_zeros(format!("{name}.bias"), 1, out_dim)?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        linear(g, x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add_ones(format!("{name}.gain"), 1, dim)?,
            bias: store.add_zeros(format!("{name}.bias"), 1, dim)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        layer_norm(g, x, gain, bias, LAYER_NORM_EPS)
    }
}

/// `linear → ReLU → linear`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), in_dim, hidden, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, out_dim, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, store, x)?;
        let h = g.relu(h);
        self.fc2.forward(g, store, h)
    }
}

/// Scaled dot-product attention with `n_heads` heads and an output projection.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub dim: usize,
    pub n_heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_heads == 0 || !dim.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "width {dim} is not divisible into {n_heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng)?,
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng)?,
            dim,
            n_heads,
        })
    }

    /// Attends from `queries` to `keys_values`; the output has one row per
    /// query row. Self-attention passes the same node twice.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        queries: Var,
        keys_values: Var,
    ) -> Result<Var> {
        self.forward_kv(g, store, queries, keys_values, keys_values)
    }

    /// Attention with distinct key and value inputs (same row count).
    pub fn forward_kv(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        queries: Var,
        keys: Var,
        values: Var,
    ) -> Result<Var> {
        let q = self.q.forward(g, store, queries)?;
        let k = self.k.forward(g, store, keys)?;
        let v = self.v.forward(g, store, values)?;
        let head_dim = self.dim / self.n_heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (qh, kh, vh) = if self.n_heads == 1 {
                (q, k, v)
            } else {
                let start = h * head_dim;
                (
                    g.slice_cols(q, start, head_dim),
                    g.slice_cols(k, start, head_dim),
                    g.slice_cols(v, start, head_dim),
                )
            };
            let scores = g.matmul_bt(qh, kh);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            heads.push(g.matmul(attn, vh));
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)
        };
        self.out.forward(g, store, merged)
    }
}

/// Attention between two token matrices.
pub fn multi_head_attention(
    g: &mut Graph,
    store: &ParamStore,
    attn: &MultiHeadAttention,
    queries: Var,
    keys_values: Var,
) -> Result<Var> {
    attn.forward(g, store, queries, keys_values)
}

/// Applies the feed-forward block.
pub fn mlp(g: &mut Graph, store: &ParamStore, m: &Mlp, x: Var) -> Result<Var> {
    m.forward(g, store, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Matrix;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn linear_identity_and_zero_input() {
        let mut g = Graph::new();
        let x = g.input(array![[1.0, -2.0], [3.0, 4.5]]);
        let w = g.input(Array2::eye(2));
        let b = g.input(array![[0.0, 0.0]]);
        let y = linear(&mut g, x, w, b).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let z = g.input(Array2::zeros((3, 2)));
        let b2 = g.input(array![[0.5, -0.25]]);
        let y2 = linear(&mut g, z, w, b2).unwrap();
        for row in g.value(y2).rows() {
            assert_eq!(row.to_vec(), vec![0.5, -0.25]);
        }
    }

    #[test]
    fn linear_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (xv, wv, bv) = (random(4, 5, &mut rng), random(3, 5, &mut rng), random(1, 3, &mut rng));
        let mut g = Graph::new();
        let (x, w, b) = (g.input(xv.clone()), g.input(wv.clone()), g.input(bv.clone()));
        let y = linear(&mut g, x, w, b).unwrap();
        for i in 0..4 {
            for o in 0..3 {
                let mut acc = bv[[0, o]];
                for k in 0..5 {
                    acc += xv[[i, k]] * wv[[o, k]];
                }
                assert!((g.value(y)[[i, o]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let x = g.input(Array2::zeros((2, 3)));
        let w = g.input(Array2::zeros((4, 2)));
        let b = g.input(Array2::zeros((1, 4)));
        assert!(linear(&mut g, x, w, b).is_err());
    }

    #[test]
    fn layer_norm_cases() {
        let mut g = Graph::new();
        let gain = g.input(Array2::ones((1, 4)));
        let bias = g.input(Array2::zeros((1, 4)));
        // Zero mean, unit population variance.
        let x = g.input(array![[1.0, -1.0, 1.0, -1.0]]);
        let y = layer_norm(&mut g, x, gain, bias, 1e-12).unwrap();
        for (a, b) in g.value(y).iter().zip(g.value(x).iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        let c = g.input(array![[3.0, 3.0, 3.0, 3.0]]);
        let bias2 = g.input(array![[0.1, 0.2, 0.3, 0.4]]);
        let y = layer_norm(&mut g, c, gain, bias2, LAYER_NORM_EPS).unwrap();
        assert_eq!(g.value(y), &array![[0.1, 0.2, 0.3, 0.4]]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = g.input(random(3, 4, &mut rng) * 7.0);
        let once = layer_norm(&mut g, r, gain, bias, LAYER_NORM_EPS).unwrap();
        let twice = layer_norm(&mut g, once, gain, bias, LAYER_NORM_EPS).unwrap();
        // Idempotent up to the variance floor.
        for (a, b) in g.value(once).iter().zip(g.value(twice).iter()) {
            assert!((a - b).abs() < 1e-4);
        }
        let once = layer_norm(&mut g, r, gain, bias, 1e-12).unwrap();
        let twice = layer_norm(&mut g, once, gain, bias, 1e-12).unwrap();
        for (a, b) in g.value(once).iter().zip(g.value(twice).iter()) {
            assert!((a - b).abs() < 1e-7);
        }
        let narrow = g.input(array![[1.0]]);
        let g1 = g.input(array![[1.0]]);
        assert!(layer_norm(&mut g, narrow, g1, g1, 1e-5).is_err());
    }

    #[test]
    fn attention_single_key_passes_value_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let attn = MultiHeadAttention::new(&mut store, "a", 4, 2, &mut rng).unwrap();
        let mut g = Graph::new();
        let q = g.input(random(1, 4, &mut rng));
        let kv = g.input(random(1, 4, &mut rng));
        let y = attn.forward(&mut g, &store, q, kv).unwrap();
        let v = attn.v.forward(&mut g, &store, kv).unwrap();
        let expected = attn.out.forward(&mut g, &store, v).unwrap();
        for (a, b) in g.value(y).iter().zip(g.value(expected).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_zero_output_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut store = ParamStore::new();
        let attn = MultiHeadAttention::new(&mut store, "a", 4, 2, &mut rng).unwrap();
        store.value_mut(attn.out.weight).fill(0.0);
        let mut g = Graph::new();
        let x = g.input(random(3, 4, &mut rng));
        let y = attn.forward(&mut g, &store, x, x).unwrap();
        assert!(g.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indivisible_heads_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        assert!(matches!(
            MultiHeadAttention::new(&mut store, "a", 6, 4, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mlp_zero_second_layer_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParamStore::new();
        let m = Mlp::new(&mut store, "m", 3, 12, 3, &mut rng).unwrap();
        store.value_mut(m.fc2.weight).fill(0.0);
        *store.value_mut(m.fc2.bias) = array![[0.5, -1.0, 2.0]];
        let mut g = Graph::new();
        let x = g.input(random(4, 3, &mut rng));
        let y = m.forward(&mut g, &store, x).unwrap();
        for row in g.value(y).rows() {
            assert_eq!(row.to_vec(), vec![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn mlp_pass_through_on_positive_orthant() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut store = ParamStore::new();
        let m = Mlp::new(&mut store, "m", 3, 12, 3, &mut rng).unwrap();
        let mut w1 = Array2::zeros((12, 3));
        let mut w2 = Array2::zeros((3, 12));
        for i in 0..3 {
            w1[[i, i]] = 1.0;
            w2[[i, i]] = 1.0;
        }
        *store.value_mut(m.fc1.weight) = w1;
        *store.value_mut(m.fc2.weight) = w2;
        let mut g = Graph::new();
        let xv = array![[0.5, 1.5, 2.0], [0.1, 0.0, 3.0]];
        let x = g.input(xv.clone());
        let y = m.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y), &xv);
    }

    #[test]
    fn default_head_count() {
        assert_eq!(default_heads(256), 8);
        assert_eq!(default_heads(32), 1);
        assert_eq!(default_heads(8), 1);
    }
}
