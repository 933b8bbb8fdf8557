//! Pseudo-label preparation for a dataset directory.

use crate::detector::FrozenBackbone;
use crate::error::{Error, Result};
use crate::prep::pipeline::{prepare_labels, PrepConfig, PreparedLabels};

use super::dataset::DatasetItem;

/// Boxes from masks, crop features from the frozen extractor, PCA to
/// `cfg.emb_dim`, normalization and clustering. The extractor must use the
/// detector's image size, width and backbone seed.
pub fn prepare_dataset_labels(
    dataset: &[DatasetItem],
    backbone: &FrozenBackbone,
    cfg: PrepConfig,
) -> Result<PreparedLabels> {
    if backbone.dim() != cfg.emb_dim {
        return Err(Error::Config(format!(
            "extractor width {} differs from embedding width {}",
            backbone.dim(),
            cfg.emb_dim
        )));
    }
    let images: Vec<(String, Vec<Vec<crate::geometry::Point>>)> =
        dataset.iter().map(|d| (d.id.clone(), d.masks.clone())).collect();
    let lookup = |id: &str| dataset.iter().find(|d| d.id == id);
    prepare_labels(
        &images,
        |id, bbox| {
            let item = lookup(id).expect("ids come from the dataset");
            backbone.embed_crop(&item.image, bbox)
        },
        cfg,
    )
}
