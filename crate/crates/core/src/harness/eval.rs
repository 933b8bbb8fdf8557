//! Alignment between predicted and object embeddings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{feature_discrepancy, Detector};
use crate::error::{Error, Result};
use crate::losses::{hungarian, match_cost, LossConfig, Predictions};
use crate::nn::Graph;

use super::train::TrainItem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAlignment {
    pub image_id: String,
    /// Mean cosine similarity of matched pairs; `None` without objects.
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub images: Vec<ImageAlignment>,
    /// Mean over images that have objects.
    pub mean: f64,
}

/// Runs the deployment-shaped forward on every image, matches the final
/// decoder layer to the pseudo-labels and measures the cosine similarity of
/// matched predicted embeddings to the stored (un-enhanced) object
/// embeddings.
pub fn eval_alignment(det: &Detector, items: &[TrainItem], loss: &LossConfig) -> Result<AlignmentReport> {
    if items.is_empty() {
        return Err(Error::Data("no images to evaluate".into()));
    }
    let images = items
        .par_iter()
        .map(|item| -> Result<ImageAlignment> {
            let mut g = Graph::new();
            let layers = det.finetune_forward(&mut g, &item.tokens)?;
            let last = layers.last().expect("validated decoder has a layer");
            let similarity = if item.labels.is_empty() {
                None
            } else {
                let preds = Predictions {
                    class_logits: g.value(last.class_logits),
                    boxes: g.value(last.boxes),
                    angle_logits: g.value(last.angle_logits),
                };
                let cost = match_cost(preds, item.labels.annotations(), loss.matching, loss.focal, loss.csl)?;
                let m = hungarian(&cost)?;
                feature_discrepancy(g.value(last.embeddings), &item.labels.objects, &m.pairs)
            };
            Ok(ImageAlignment {
                image_id: item.id.clone(),
                similarity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = images.iter().filter_map(|a| a.similarity).collect();
    if values.is_empty() {
        return Err(Error::Data("no image has objects to align".into()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(AlignmentReport { images, mean })
}
