//! Offline pseudo-label construction: instance boxes from masks, embedding
//! reduction with PCA, clustering with k-means, and the on-disk label store.

pub mod kmeans;
pub mod labels;
pub mod pca;
pub mod pipeline;

pub use kmeans::{assign_cluster, kmeans_fit, KMeansModel};
pub use labels::{read_label_store, write_label_store, PseudoLabel, PseudoLabelSet, LABEL_SUFFIX};
pub use pca::{pca_fit, pca_project, PcaModel};
pub use pipeline::{
    instance_boxes, masks_to_pseudolabels, prepare_labels, reduce_embedding, InstanceBoxes, PrepConfig,
    PreparedLabels,
};

use crate::error::{Error, Result};

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateInput(format!(
            "cannot normalize a vector of norm {norm}"
        )));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}
