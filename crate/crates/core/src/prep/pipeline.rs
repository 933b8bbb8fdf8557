//! From instance masks to pseudo-labels.

use log::warn;

use crate::error::{Error, Result};
use crate::geometry::{min_area_rect, OrientedBox, Point};
use crate::nn::Matrix;

use super::kmeans::{assign_cluster, kmeans_fit, KMeansModel};
use super::l2_normalize;
use super::labels::{PseudoLabel, PseudoLabelSet};
use super::pca::{pca_fit, pca_project, PcaModel};

/// Boxes of the usable instances of one image, in mask order.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceBoxes {
    pub boxes: Vec<OrientedBox>,
    /// Masks that could not be turned into a box.
    pub dropped: usize,
}

/// Minimum-area rectangle of every mask; degenerate masks are dropped.
pub fn instance_boxes(masks: &[Vec<Point>]) -> InstanceBoxes {
    let mut boxes = Vec::with_capacity(masks.len());
    let mut dropped = 0;
    for m in masks {
        match min_area_rect(m) {
            Ok(b) => boxes.push(b),
            Err(_) => dropped += 1,
        }
    }
    InstanceBoxes { boxes, dropped }
}

/// Projects a raw feature with `pca` and normalizes the result.
pub fn reduce_embedding(pca: &PcaModel, raw: &[f64]) -> Result<Vec<f64>> {
    l2_normalize(&pca_project(pca, raw)?)
}

/// Pseudo-labels of one image given fitted models. `embed_fn` maps a box to
/// its raw crop feature. Returns the label set and the number of dropped
/// instances.
pub fn masks_to_pseudolabels<F>(
    image_id: &str,
    masks: &[Vec<Point>],
    mut embed_fn: F,
    pca: &PcaModel,
    km: &KMeansModel,
) -> Result<(PseudoLabelSet, usize)>
where
    F: FnMut(&OrientedBox) -> Result<Vec<f64>>,
{
    let InstanceBoxes { boxes, mut dropped } = instance_boxes(masks);
    let mut entries = Vec::with_capacity(boxes.len());
    for bbox in boxes {
        let raw = embed_fn(&bbox)?;
        match reduce_embedding(pca, &raw) {
            Ok(embedding) => {
                let cls = assign_cluster(km, &embedding)?;
                entries.push(PseudoLabel { bbox, cls, embedding });
            }
            Err(Error::DegenerateInput(_)) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyLabels(format!(
            "{image_id}: all {} instances are degenerate",
            masks.len()
        )));
    }
    if dropped > 0 {
        warn!("{image_id}: dropped {dropped} degenerate instance(s)");
    }
    Ok((
        PseudoLabelSet {
            image_id: image_id.to_string(),
            entries,
        },
        dropped,
    ))
}

/// Settings for fitting the reduction and clustering models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepConfig {
    pub emb_dim: usize,
    pub k_cls: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

/// Fitted models and the labels of every image.
#[derive(Debug, Clone)]
pub struct PreparedLabels {
    pub sets: Vec<PseudoLabelSet>,
    pub pca: PcaModel,
    pub kmeans: KMeansModel,
    pub dropped: usize,
}

/// Fits PCA on the raw features of all instances, clusters the normalized
/// projections and labels every image. Images are processed in the given
/// order; images without usable instances get an empty set.
pub fn prepare_labels<F>(
    images: &[(String, Vec<Vec<Point>>)],
    mut embed_fn: F,
    cfg: PrepConfig,
) -> Result<PreparedLabels>
where
    F: FnMut(&str, &OrientedBox) -> Result<Vec<f64>>,
{
    let mut per_image = Vec::with_capacity(images.len());
    let mut raw_rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0;
    for (id, masks) in images {
        let inst = instance_boxes(masks);
        dropped += inst.dropped;
        let mut feats = Vec::with_capacity(inst.boxes.len());
        for b in &inst.boxes {
            let f = embed_fn(id, b)?;
            raw_rows.push(f.clone());
            feats.push(f);
        }
        per_image.push((id.clone(), inst.boxes, feats));
    }
    let d = raw_rows.first().map_or(0, Vec::len);
    if raw_rows.iter().any(|r| r.len() != d) {
        return Err(Error::Data("raw features differ in width".into()));
    }
    let x = Matrix::from_shape_fn((raw_rows.len(), d), |(i, j)| raw_rows[i][j]);
    let pca = pca_fit(&x, cfg.emb_dim)?;

    let mut reduced = Vec::with_capacity(raw_rows.len());
    let mut keep = Vec::with_capacity(raw_rows.len());
    for row in &raw_rows {
        match reduce_embedding(&pca, row) {
            Ok(e) => {
                reduced.push(e);
                keep.push(true);
            }
            Err(Error::DegenerateInput(_)) => keep.push(false),
            Err(e) => return Err(e),
        }
    }
    let z = Matrix::from_shape_fn((reduced.len(), cfg.emb_dim), |(i, j)| reduced[i][j]);
    let kmeans = kmeans_fit(&z, cfg.k_cls, cfg.kmeans_iters, cfg.seed)?;

    let mut sets = Vec::with_capacity(per_image.len());
    let mut flat = 0;
    let mut next_reduced = reduced.into_iter();
    for (id, boxes, _) in per_image {
        let mut entries = Vec::with_capacity(boxes.len());
        for bbox in boxes {
            let kept = keep[flat];
            flat += 1;
            if !kept {
                dropped += 1;
                continue;
            }
            let embedding = next_reduced.next().expect("one reduced row per kept instance");
            let cls = assign_cluster(&kmeans, &embedding)?;
            entries.push(PseudoLabel { bbox, cls, embedding });
        }
        if entries.is_empty() {
            warn!("{id}: no usable instances");
        }
        sets.push(PseudoLabelSet { image_id: id, entries });
    }
    if dropped > 0 {
        warn!("dropped {dropped} degenerate instance(s)");
    }
    Ok(PreparedLabels {
        sets,
        pca,
        kmeans,
        dropped,
    })
}
