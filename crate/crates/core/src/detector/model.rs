//! The detector: frozen extractor, encoder, proposal selection, optional
//! mutual enhancement and a decoder shared by both branches.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::enhancement::{mutual_enhance, MutualEnhancement};
use crate::error::{Error, Result};
use crate::losses::{BranchVars, CalibrationMode, HeadVars};
use crate::nn::{sigmoid, Graph, LayerNorm, Matrix, Mlp, MultiHeadAttention, ParamId, ParamStore, Var};

use super::backbone::{FrozenBackbone, Image};
use super::config::DetectorConfig;
use super::heads::{gather_heads, select_top, Heads};

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    ln_attn: LayerNorm,
    ffn: Mlp,
    ln_ffn: LayerNorm,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    ln_self: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln_cross: LayerNorm,
    ffn: Mlp,
    ln_ffn: LayerNorm,
}

/// Concrete head outputs of one set of predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput {
    /// `N×4` normalized `(cx, cy, w, h)`.
    pub boxes: Matrix,
    pub class_scores: Matrix,
    pub angle_scores: Matrix,
    pub embeddings: Matrix,
}

impl BranchOutput {
    pub fn read(g: &Graph, h: &HeadVars) -> Self {
        Self {
            boxes: g.value(h.boxes).clone(),
            class_scores: g.value(h.class_logits).clone(),
            angle_scores: g.value(h.angle_logits).clone(),
            embeddings: g.value(h.embeddings).clone(),
        }
    }
}

/// Graph handles produced by a pre-training forward pass.
#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub f: Var,
    pub f_enh: Var,
    pub o_enh: Var,
    pub main: BranchVars,
    pub aux: Option<BranchVars>,
}

#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    store: ParamStore,
    backbone: FrozenBackbone,
    positions: Matrix,
    box_prior: Matrix,
    encoder: Vec<EncoderLayer>,
    encoder_heads: Heads,
    enhancement: Option<MutualEnhancement>,
    queries: ParamId,
    /// Learned reference boxes (logits), absent with two-stage queries.
    anchors: Option<ParamId>,
    decoder: Vec<DecoderLayer>,
    decoder_heads: Heads,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Channel `k` of a `dim`-wide encoding: the source axis (0 for x, 1 for
/// y) and the angular frequency.
fn channel(k: usize, dim: usize) -> (usize, f64) {
    let half = dim / 2;
    let (axis, j, width) = if k < half { (0, k, half) } else { (1, k - half, dim - half) };
    let pair = (j / 2) as f64;
    (axis, 2.0 * PI * 10000f64.powf(-2.0 * pair / width.max(1) as f64))
}

fn encode_point(x: f64, y: f64, out: &mut [f64]) {
    let dim = out.len();
    for (k, v) in out.iter_mut().enumerate() {
        let (axis, freq) = channel(k, dim);
        let a = freq * if axis == 0 { x } else { y };
        *v = if k % 2 == 0 { a.sin() } else { a.cos() };
    }
}

/// Differentiable encoding of the centres `sigmoid(r[:, 0..2])` of box
/// logits `r`.
fn reference_encoding(g: &mut Graph, reference: Var, dim: usize) -> Var {
    let r = g.value(reference);
    let n = r.nrows();
    let mut value = Matrix::zeros((n, dim));
    let mut deriv = Matrix::zeros((n, dim));
    for i in 0..n {
        let u = [sigmoid(r[[i, 0]]), sigmoid(r[[i, 1]])];
        for k in 0..dim {
            let (axis, freq) = channel(k, dim);
            let a = freq * u[axis];
            let du = u[axis] * (1.0 - u[axis]) * freq;
            if k % 2 == 0 {
                value[[i, k]] = a.sin();
                deriv[[i, k]] = a.cos() * du;
            } else {
                value[[i, k]] = a.cos();
                deriv[[i, k]] = -a.sin() * du;
            }
        }
    }
    let src = (0..dim).map(|k| channel(k, dim).0).collect();
    g.column_map(reference, src, value, deriv)
}

/// Fixed 2-D sinusoidal encodings of every token's cell centre, half of the
/// channels for each axis.
pub fn sinusoidal_positions(grids: &[usize], dim: usize) -> Matrix {
    let centres: Vec<(f64, f64)> = grids
        .iter()
        .flat_map(|&g| {
            (0..g * g).map(move |i| {
                let (gy, gx) = (i / g, i % g);
                ((gx as f64 + 0.5) / g as f64, (gy as f64 + 0.5) / g as f64)
            })
        })
        .collect();
    point_encodings(&centres, dim)
}

/// Sinusoidal encodings of arbitrary normalized points, one row each.
pub fn point_encodings(points: &[(f64, f64)], dim: usize) -> Matrix {
    let mut pos = Matrix::zeros((points.len(), dim));
    for (mut row, &(x, y)) in pos.rows_mut().into_iter().zip(points) {
        encode_point(x, y, row.as_slice_mut().expect("standard layout"));
    }
    pos
}

/// Detached box logits from normalized boxes.
fn box_logits(boxes: &Matrix) -> Matrix {
    boxes.mapv(logit)
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-4, 1.0 - 1e-4);
    (p / (1.0 - p)).ln()
}

/// Box logit prior per token: the cell centre and a size of two cells.
fn box_prior(grids: &[usize]) -> Matrix {
    let total: usize = grids.iter().map(|g| g * g).sum();
    let mut prior = Matrix::zeros((total, 4));
    let mut row = 0;
    for &g in grids {
        let size = logit((2.0 / g as f64).min(0.9));
        for gy in 0..g {
            for gx in 0..g {
                prior[[row, 0]] = logit((gx as f64 + 0.5) / g as f64);
                prior[[row, 1]] = logit((gy as f64 + 0.5) / g as f64);
                prior[[row, 2]] = size;
                prior[[row, 3]] = size;
                row += 1;
            }
        }
    }
    prior
}

impl Detector {
    /// Builds a freshly initialized detector. Every component draws from its
    /// own random stream so that toggling one component leaves the others'
    /// initial weights unchanged.
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let c = config.dim;
        let h = config.n_heads;
        let backbone = FrozenBackbone::new(config.image_size, c, config.backbone_seed)?;
        let grids = backbone.grids();
        if config.n_queries > backbone.num_tokens() {
            return Err(Error::Config(format!(
                "{} queries exceed the {} encoder tokens available for proposals",
                config.n_queries,
                backbone.num_tokens()
            )));
        }
        let seed = config.init_seed;
        let mut store = ParamStore::new();

        let mut rng = rng_stream(seed, 0);
        let mut encoder = Vec::with_capacity(config.encoder_layers);
        for i in 0..config.encoder_layers {
            let p = format!("encoder.{i}");
            encoder.push(EncoderLayer {
                attn: MultiHeadAttention::new(&mut store, &format!("{p}.attn"), c, h, &mut rng)?,
                ln_attn: LayerNorm::new(&mut store, &format!("{p}.ln_attn"), c)?,
                ffn: Mlp::new(&mut store, &format!("{p}.ffn"), c, 4 * c, c, &mut rng)?,
                ln_ffn: LayerNorm::new(&mut store, &format!("{p}.ln_ffn"), c)?,
            });
        }
        let mut rng = rng_stream(seed, 1);
        let encoder_heads = Heads::new(&mut store, "encoder_heads", c, config.k_cls, config.a_bins, &mut rng)?;

        let enhancement = if config.enhance {
            let mut rng = rng_stream(seed, 2);
            Some(MutualEnhancement::new(
                &mut store,
                "enhance",
                c,
                h,
                config.enhancement_layers,
                &mut rng,
            )?)
        } else {
            None
        };

        let mut rng = rng_stream(seed, 3);
        let queries = store.add_uniform("decoder.queries", config.n_queries, c, 1, &mut rng)?;
        let anchors = if config.two_stage_queries {
            None
        } else {
            let size = logit(0.2);
            let value = Matrix::from_shape_fn((config.n_queries, 4), |(_, j)| {
                if j < 2 {
                    logit(rng.random_range(0.1..0.9))
                } else {
                    size
                }
            });
            Some(store.add("decoder.anchors", value)?)
        };
        let mut decoder = Vec::with_capacity(config.decoder_layers);
        for i in 0..config.decoder_layers {
            let p = format!("decoder.{i}");
            decoder.push(DecoderLayer {
                self_attn: MultiHeadAttention::new(&mut store, &format!("{p}.self_attn"), c, h, &mut rng)?,
                ln_self: LayerNorm::new(&mut store, &format!("{p}.ln_self"), c)?,
                cross_attn: MultiHeadAttention::new(&mut store, &format!("{p}.cross_attn"), c, h, &mut rng)?,
                ln_cross: LayerNorm::new(&mut store, &format!("{p}.ln_cross"), c)?,
                ffn: Mlp::new(&mut store, &format!("{p}.ffn"), c, 4 * c, c, &mut rng)?,
                ln_ffn: LayerNorm::new(&mut store, &format!("{p}.ln_ffn"), c)?,
            });
        }
        let mut rng = rng_stream(seed, 4);
        let decoder_heads = Heads::new(&mut store, "decoder_heads", c, config.k_cls, config.a_bins, &mut rng)?;

        Ok(Self {
            positions: sinusoidal_positions(&grids, c),
            box_prior: box_prior(&grids),
            config,
            store,
            backbone,
            encoder,
            encoder_heads,
            enhancement,
            queries,
            anchors,
            decoder,
            decoder_heads,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn backbone(&self) -> &FrozenBackbone {
        &self.backbone
    }

    pub fn enhancement(&self) -> Option<&MutualEnhancement> {
        self.enhancement.as_ref()
    }

    /// Parameter ids of the enhancement module (empty when disabled).
    pub fn enhancement_params(&self) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| self.store.name(id).starts_with("enhance."))
            .collect()
    }

    /// Parameter ids of the decoder, including its queries and heads.
    pub fn decoder_params(&self) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| self.store.name(id).starts_with("decoder"))
            .collect()
    }

    /// Frozen features of an image.
    pub fn backbone_tokens(&self, image: &Image) -> Result<Matrix> {
        self.backbone.forward(image)
    }

    /// Encoder features `F` from backbone tokens.
    pub fn encode(&self, g: &mut Graph, tokens: &Matrix) -> Result<Var> {
        if tokens.dim() != self.positions.dim() {
            return Err(Error::invalid(format!(
                "encoder expects {:?} tokens, got {:?}",
                self.positions.dim(),
                tokens.dim()
            )));
        }
        let mut x = g.input(tokens + &self.positions);
        for layer in &self.encoder {
            let a = layer.attn.forward(g, &self.store, x, x)?;
            let s = g.add(a, x);
            x = layer.ln_attn.forward(g, &self.store, s)?;
            let f = layer.ffn.forward(g, &self.store, x)?;
            let s = g.add(f, x);
            x = layer.ln_ffn.forward(g, &self.store, s)?;
        }
        Ok(x)
    }

    /// Per-token head outputs on `memory`, then the top-`N` rows by maximum
    /// class logit. Returns the selected outputs and their token indices.
    pub fn encoder_proposals(&self, g: &mut Graph, memory: Var) -> Result<(HeadVars, Vec<usize>)> {
        let prior = g.input(self.box_prior.clone());
        let all = self.encoder_heads.forward(g, &self.store, memory, Some(prior))?;
        let idx = select_top(g.value(all.class_logits), self.config.n_queries);
        Ok((gather_heads(g, &all, &idx), idx))
    }

    /// Decoder inputs: content queries and their reference box logits.
    /// Two-stage queries add the detached proposal tokens to the learned
    /// content and start from the proposal boxes; otherwise the references
    /// are the learned anchors.
    fn query_input(&self, g: &mut Graph, memory: Var, proposals: Option<(&HeadVars, &[usize])>) -> (Var, Var) {
        let q = g.param(&self.store, self.queries);
        match (proposals, self.anchors) {
            (Some((heads, idx)), _) if self.config.two_stage_queries => {
                let picked = g.gather_rows(memory, idx);
                let picked = g.detach(picked);
                let reference = g.input(box_logits(g.value(heads.boxes)));
                (g.add(q, picked), reference)
            }
            (_, Some(anchors)) => (q, g.param(&self.store, anchors)),
            _ => unreachable!("two-stage detectors always receive proposals"),
        }
    }

    /// Runs the decoder on `memory` from the given queries and reference
    /// box logits; returns the head outputs of every layer. Cross-attention
    /// keys carry token positions and queries carry the encoding of their
    /// current reference centre; each layer refines the previous boxes.
    pub fn decode(&self, g: &mut Graph, memory: Var, queries: Var, reference: Var) -> Result<Vec<HeadVars>> {
        let pos = g.input(self.positions.clone());
        let keys = g.add(memory, pos);
        let mut q = queries;
        let mut reference = reference;
        let mut outputs = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let a = layer.self_attn.forward(g, &self.store, q, q)?;
            let s = g.add(a, q);
            q = layer.ln_self.forward(g, &self.store, s)?;
            let qpos = reference_encoding(g, reference, self.config.dim);
            let qa = g.add(q, qpos);
            let a = layer.cross_attn.forward_kv(g, &self.store, qa, keys, memory)?;
            let s = g.add(a, q);
            q = layer.ln_cross.forward(g, &self.store, s)?;
            let f = layer.ffn.forward(g, &self.store, q)?;
            let s = g.add(f, q);
            q = layer.ln_ffn.forward(g, &self.store, s)?;
            let heads = self.decoder_heads.forward(g, &self.store, q, Some(reference))?;
            reference = g.input(box_logits(g.value(heads.boxes)));
            outputs.push(heads);
        }
        Ok(outputs)
    }

    /// Fuses objects and features, or passes both through when the module
    /// is disabled.
    pub fn enhance(&self, g: &mut Graph, objects: Var, features: Var) -> Result<(Var, Var)> {
        match &self.enhancement {
            Some(m) => mutual_enhance(g, &self.store, m, objects, features),
            None => Ok((objects, features)),
        }
    }

    /// Pre-training forward pass. The main branch reads the enhanced
    /// features; the auxiliary branch, executed for the calibration modes
    /// that need it, runs the same decoder and queries on the plain
    /// features.
    pub fn pretrain_forward(&self, g: &mut Graph, tokens: &Matrix, objects: &Matrix) -> Result<PretrainOutput> {
        if objects.ncols() != self.config.dim {
            return Err(Error::invalid(format!(
                "object embeddings have width {}, detector width is {}",
                objects.ncols(),
                self.config.dim
            )));
        }
        let f = self.encode(g, tokens)?;
        let o = g.input(objects.clone());
        let (o_enh, f_enh) = self.enhance(g, o, f)?;
        let (enc, idx) = self.encoder_proposals(g, f_enh)?;
        let (queries, reference) = self.query_input(g, f_enh, Some((&enc, &idx)));
        let main = BranchVars {
            layers: self.decode(g, f_enh, queries, reference)?,
            encoder: Some(enc),
        };
        let aux = if self.config.calibration_mode.runs_aux_branch() {
            Some(BranchVars {
                encoder: None,
                layers: self.decode(g, f, queries, reference)?,
            })
        } else {
            None
        };
        Ok(PretrainOutput {
            f,
            f_enh,
            o_enh,
            main,
            aux,
        })
    }

    /// Deployment-shaped forward: the decoder reads the plain features and
    /// no enhancement parameter is touched.
    pub fn finetune_forward(&self, g: &mut Graph, tokens: &Matrix) -> Result<Vec<HeadVars>> {
        let f = self.encode(g, tokens)?;
        let proposals = if self.config.two_stage_queries {
            Some(self.encoder_proposals(g, f)?)
        } else {
            None
        };
        let (queries, reference) = self.query_input(g, f, proposals.as_ref().map(|(h, i)| (h, i.as_slice())));
        self.decode(g, f, queries, reference)
    }

    pub fn calibration_mode(&self) -> CalibrationMode {
        self.config.calibration_mode
    }

    pub(crate) fn from_parts(config: DetectorConfig, tensors: Vec<(String, Matrix)>) -> Result<Self> {
        let mut det = Self::new(config)?;
        if tensors.len() != det.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                tensors.len(),
                det.store.len()
            )));
        }
        for (name, value) in tensors {
            det.store.set(&name, value)?;
        }
        Ok(det)
    }
}

/// Mean cosine similarity over matched `(annotation, prediction)` pairs
/// between predicted embeddings `z` and object embeddings `o`. `None` when
/// nothing is matched.
pub fn feature_discrepancy(z: &Matrix, o: &Matrix, pairs: &[(usize, usize)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let mut acc = 0.0;
    for &(a, p) in pairs {
        let zr = z.row(p);
        let or = o.row(a);
        let denom = zr.dot(&zr).sqrt() * or.dot(&or).sqrt();
        acc += if denom > 0.0 { zr.dot(&or) / denom } else { 0.0 };
    }
    Some(acc / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DetectorConfig {
        DetectorConfig {
            image_size: 8,
            dim: 8,
            n_heads: 2,
            n_queries: 4,
            k_cls: 3,
            a_bins: 12,
            decoder_layers: 2,
            enhancement_layers: 1,
            ..DetectorConfig::default()
        }
    }

    #[test]
    fn reference_encoding_matches_points_and_gradient() {
        let r = ndarray::array![[0.3, -1.2, 0.0, 0.0], [2.0, 0.5, 0.1, 0.1]];
        let w = Matrix::from_shape_fn((2, 6), |(i, j)| (i * 6 + j) as f64 * 0.1 - 0.4);
        let weighted = |r: &Matrix| -> f64 {
            let mut g = Graph::new();
            let x = g.input(r.clone());
            let e = reference_encoding(&mut g, x, 6);
            (g.value(e) * &w).sum()
        };

        let mut g = Graph::new();
        let x = g.input(r.clone());
        let e = reference_encoding(&mut g, x, 6);
        let pts: Vec<(f64, f64)> = r.rows().into_iter().map(|row| (sigmoid(row[0]), sigmoid(row[1]))).collect();
        assert!((g.value(e) - &point_encodings(&pts, 6)).iter().all(|d| d.abs() < 1e-15));

        let root = g.scalar_op(weighted(&r), vec![(e, w.clone())]);
        let grad = g.backward(root).wrt(x).cloned().unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..4 {
                let mut p = r.clone();
                p[[i, j]] += h;
                let mut m = r.clone();
                m[[i, j]] -= h;
                let fd = (weighted(&p) - weighted(&m)) / (2.0 * h);
                assert!((fd - grad[[i, j]]).abs() < 1e-7, "{i},{j}: {fd} vs {}", grad[[i, j]]);
            }
        }
    }

    #[test]
    fn decoder_is_equivariant_to_query_order() {
        let det = Detector::new(tiny()).unwrap();
        let tokens = det.backbone_tokens(&Image::filled(8, 8, [0.2, 0.5, 0.7])).unwrap();
        let perm = [2usize, 0, 3, 1];
        let mut permuted = det.clone();
        for name in ["decoder.queries", "decoder.anchors"] {
            let id = det.store().id(name).unwrap();
            let v = det.store().value(id).select(ndarray::Axis(0), &perm);
            permuted.store_mut().set(name, v).unwrap();
        }
        let run = |d: &Detector| {
            let mut g = Graph::new();
            let layers = d.finetune_forward(&mut g, &tokens).unwrap();
            layers.iter().map(|h| BranchOutput::read(&g, h)).collect::<Vec<_>>()
        };
        let base = run(&det);
        let other = run(&permuted);
        for (a, b) in base.iter().zip(&other) {
            let a_perm = a.embeddings.select(ndarray::Axis(0), &perm);
            assert!((&a_perm - &b.embeddings).iter().all(|d| d.abs() < 1e-12));
            let a_perm = a.boxes.select(ndarray::Axis(0), &perm);
            assert!((&a_perm - &b.boxes).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn two_stage_has_no_anchors() {
        let det = Detector::new(DetectorConfig {
            two_stage_queries: true,
            ..tiny()
        })
        .unwrap();
        assert!(det.store().id("decoder.anchors").is_none());
        let tokens = det.backbone_tokens(&Image::filled(8, 8, [0.1, 0.1, 0.1])).unwrap();
        let mut g = Graph::new();
        assert_eq!(det.finetune_forward(&mut g, &tokens).unwrap().len(), 2);
    }
}
