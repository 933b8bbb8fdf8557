//! Matching and training objectives: Hungarian assignment, contrastive
//! alignment, focal classification, box regression, angle classification,
//! calibration distillation and their composition into one objective.

pub mod angle;
pub mod compose;
pub mod contrastive;
pub mod distill;
pub mod focal;
pub mod hungarian;
pub mod matching;
pub mod regression;

pub use angle::{angle_bin, angle_csl_loss, csl_target, CslWindow};
pub use compose::{
    compose_losses, BranchVars, CalibrationMode, HeadVars, LossBreakdown, LossConfig, ObjectiveInputs,
};
pub use contrastive::{contrastive_alignment_loss, detector_alignment_loss, DEFAULT_TAU};
pub use distill::{decoder_cross_distill, encoder_feature_distill};
pub use focal::{focal_loss, FocalParams};
pub use hungarian::{hungarian, MatchAssignment};
pub use matching::{match_cost, Annotations, MatchWeights, Predictions};
pub use regression::{reg_loss, RegressionWeights};

/// A loss value together with a flag telling whether the term had nothing
/// to act on (for example an image without annotations).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub empty: bool,
}

impl LossTerm {
    pub fn new(value: f64) -> Self {
        Self { value, empty: false }
    }

    pub fn empty() -> Self {
        Self {
            value: 0.0,
            empty: true,
        }
    }
}
