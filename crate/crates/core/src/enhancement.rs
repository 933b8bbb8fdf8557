//! Mutual enhancement of object embeddings and encoder features.
//!
//! Each layer updates the object embeddings `O` with self-attention,
//! cross-attention into the features `F` and an MLP, then lets `F` attend
//! to the updated objects:
//!
//! ```text
//! O'      = LN(MHSA(O) + O)
//! O''     = LN(MHCA(O', F) + O')
//! O_next  = LN(MLP(O'') + O'')
//! F_next  = LN(MHCA(F, O_next) + F)
//! ```
//!
//! With no objects the object side is skipped and `F_next = LN(F)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Graph, LayerNorm, Mlp, MultiHeadAttention, ParamId, ParamStore, Var};

/// Parameters of one fusion layer.
#[derive(Debug, Clone)]
pub struct EnhancementLayer {
    pub self_attn: MultiHeadAttention,
    /// Objects attend to features.
    pub cross_attn_obj: MultiHeadAttention,
    /// Features attend to objects.
    pub cross_attn_feat: MultiHeadAttention,
    pub mlp: Mlp,
    pub ln_self: LayerNorm,
    pub ln_cross: LayerNorm,
    pub ln_mlp: LayerNorm,
    pub ln_feat: LayerNorm,
}

impl EnhancementLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), dim, n_heads, rng)?,
            cross_attn_obj: MultiHeadAttention::new(store, &format!("{name}.cross_obj"), dim, n_heads, rng)?,
            cross_attn_feat: MultiHeadAttention::new(store, &format!("{name}.cross_feat"), dim, n_heads, rng)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), dim, 4 * dim, dim, rng)?,
            ln_self: LayerNorm::new(store, &format!("{name}.ln_self"), dim)?,
            ln_cross: LayerNorm::new(store, &format!("{name}.ln_cross"), dim)?,
            ln_mlp: LayerNorm::new(store, &format!("{name}.ln_mlp"), dim)?,
            ln_feat: LayerNorm::new(store, &format!("{name}.ln_feat"), dim)?,
        })
    }

    /// Output projections of the three attention blocks and the second MLP
    /// layer; zeroing them leaves only the residual paths.
    pub fn residual_branch_outputs(&self) -> Vec<ParamId> {
        vec![
            self.self_attn.out.weight,
            self.self_attn.out.bias,
            self.cross_attn_obj.out.weight,
            self.cross_attn_obj.out.bias,
            self.cross_attn_feat.out.weight,
            self.cross_attn_feat.out.bias,
            self.mlp.fc2.weight,
            self.mlp.fc2.bias,
        ]
    }
}

/// One fusion layer; returns `(O_next, F_next)`.
pub fn enhancement_layer(
    g: &mut Graph,
    store: &ParamStore,
    layer: &EnhancementLayer,
    o: Var,
    f: Var,
) -> Result<(Var, Var)> {
    let (m, c_o) = g.value(o).dim();
    let (k, c_f) = g.value(f).dim();
    if k == 0 {
        return Err(Error::invalid("enhancement layer needs at least one feature token"));
    }
    if m == 0 {
        let f_next = layer.ln_feat.forward(g, store, f)?;
        return Ok((o, f_next));
    }
    if c_o != c_f {
        return Err(Error::invalid(format!(
            "enhancement layer: object width {c_o} differs from feature width {c_f}"
        )));
    }

    let sa = layer.self_attn.forward(g, store, o, o)?;
    let sum = g.add(sa, o);
    let o1 = layer.ln_self.forward(g, store, sum)?;

    let ca = layer.cross_attn_obj.forward(g, store, o1, f)?;
    let sum = g.add(ca, o1);
    let o2 = layer.ln_cross.forward(g, store, sum)?;

    let ff = layer.mlp.forward(g, store, o2)?;
    let sum = g.add(ff, o2);
    let o_next = layer.ln_mlp.forward(g, store, sum)?;

    let fa = layer.cross_attn_feat.forward(g, store, f, o_next)?;
    let sum = g.add(fa, f);
    let f_next = layer.ln_feat.forward(g, store, sum)?;
    Ok((o_next, f_next))
}

/// A stack of fusion layers.
#[derive(Debug, Clone)]
pub struct MutualEnhancement {
    pub layers: Vec<EnhancementLayer>,
}

impl MutualEnhancement {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        n_heads: usize,
        n_layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|i| EnhancementLayer::new(store, &format!("{name}.{i}"), dim, n_heads, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }
}

/// Applies every layer in order; returns `(O_enh, F_enh)`.
pub fn mutual_enhance(
    g: &mut Graph,
    store: &ParamStore,
    module: &MutualEnhancement,
    o: Var,
    f: Var,
) -> Result<(Var, Var)> {
    module
        .layers
        .iter()
        .try_fold((o, f), |(o, f), layer| enhancement_layer(g, store, layer, o, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn shapes_are_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let module = MutualEnhancement::new(&mut store, "enh", 32, 1, 3, &mut rng).unwrap();
        let mut g = Graph::new();
        let o = g.input(random(5, 32, &mut rng));
        let f = g.input(random(12, 32, &mut rng));
        let (o2, f2) = mutual_enhance(&mut g, &store, &module, o, f).unwrap();
        assert_eq!(g.value(o2).dim(), (5, 32));
        assert_eq!(g.value(f2).dim(), (12, 32));
    }

    #[test]
    fn no_objects_normalizes_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let module = MutualEnhancement::new(&mut store, "enh", 8, 1, 2, &mut rng).unwrap();
        let mut g = Graph::new();
        let o = g.input(Matrix::zeros((0, 8)));
        let f = g.input(random(6, 8, &mut rng));
        let (o2, f2) = mutual_enhance(&mut g, &store, &module, o, f).unwrap();
        assert_eq!(g.value(o2).nrows(), 0);
        assert_eq!(g.value(f2).dim(), (6, 8));
        for row in g.value(f2).rows() {
            assert!(row.mean().unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut store = ParamStore::new();
            let module = MutualEnhancement::new(&mut store, "enh", 8, 2, 3, &mut rng).unwrap();
            let mut g = Graph::new();
            let o = g.input(random(3, 8, &mut rng));
            let f = g.input(random(7, 8, &mut rng));
            let (o2, f2) = mutual_enhance(&mut g, &store, &module, o, f).unwrap();
            (g.value(o2).clone(), g.value(f2).clone())
        };
        assert_eq!(run(), run());
    }
}
