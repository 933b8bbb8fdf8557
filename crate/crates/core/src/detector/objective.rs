//! The pre-training objective of one image.

use crate::error::{Error, Result};
use crate::geometry::OrientedBox;
use crate::losses::compose::ObjectiveInputs;
use crate::losses::{compose_losses, Annotations, LossBreakdown, LossConfig};
use crate::nn::{Graph, Matrix, Var};
use crate::prep::PseudoLabelSet;

use super::model::{Detector, PretrainOutput};

/// Pseudo-labels of one image in the detector's normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTensors {
    pub boxes: Vec<OrientedBox>,
    pub classes: Vec<usize>,
    /// `M×C` object embeddings.
    pub objects: Matrix,
}

impl LabelTensors {
    /// Converts a label set with pixel boxes for `image_size`-pixel images.
    pub fn from_set(set: &PseudoLabelSet, image_size: usize, dim: usize, k_cls: usize) -> Result<Self> {
        set.validate(dim, k_cls)?;
        let boxes = set
            .entries
            .iter()
            .map(|e| e.bbox.scaled(image_size as f64))
            .collect::<Result<Vec<_>>>()?;
        let classes = set.entries.iter().map(|e| e.cls).collect();
        let objects = Matrix::from_shape_fn((set.len(), dim), |(i, j)| set.entries[i].embedding[j]);
        Ok(Self {
            boxes,
            classes,
            objects,
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn annotations(&self) -> Annotations<'_> {
        Annotations {
            boxes: &self.boxes,
            classes: &self.classes,
        }
    }
}

/// Builds the forward pass and objective of one image on `g`.
pub fn pretrain_loss(
    det: &Detector,
    g: &mut Graph,
    tokens: &Matrix,
    labels: &LabelTensors,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown, PretrainOutput)> {
    if labels.len() > det.config().n_queries {
        return Err(Error::Data(format!(
            "{} objects exceed the {} queries",
            labels.len(),
            det.config().n_queries
        )));
    }
    let out = det.pretrain_forward(g, tokens, &labels.objects)?;
    let inputs = ObjectiveInputs {
        main: &out.main,
        aux: out.aux.as_ref(),
        objects: out.o_enh,
        features: Some((out.f, out.f_enh)),
        annotations: labels.annotations(),
    };
    let (total, breakdown) = compose_losses(g, &inputs, det.calibration_mode(), cfg)?;
    Ok((total, breakdown, out))
}
