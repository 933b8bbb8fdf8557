//! Detector hyper-parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::CalibrationMode;
use crate::nn::layers::default_heads;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Side length of the square input images.
    pub image_size: usize,
    /// Feature width `C`.
    pub dim: usize,
    pub n_heads: usize,
    /// Number of object queries and of selected encoder proposals `N`.
    pub n_queries: usize,
    pub k_cls: usize,
    pub a_bins: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub enhancement_layers: usize,
    /// Whether the mutual enhancement module is used; when off the
    /// enhanced features and embeddings are the plain ones.
    pub enhance: bool,
    pub calibration_mode: CalibrationMode,
    /// Initialize decoder queries from the selected encoder proposals.
    pub two_stage_queries: bool,
    pub init_seed: u64,
    pub backbone_seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            dim: 32,
            n_heads: default_heads(32),
            n_queries: 20,
            k_cls: 16,
            a_bins: 180,
            encoder_layers: 1,
            decoder_layers: 2,
            enhancement_layers: 3,
            enhance: true,
            calibration_mode: CalibrationMode::Siamese,
            two_stage_queries: false,
            init_seed: 0,
            backbone_seed: 1,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim < 2 {
            return fail(format!("feature width must be at least 2, got {}", self.dim));
        }
        if self.n_heads == 0 || !self.dim.is_multiple_of(self.n_heads) {
            return fail(format!("width {} is not divisible into {} heads", self.dim, self.n_heads));
        }
        if self.n_queries == 0 {
            return fail("at least one query is required".into());
        }
        if self.k_cls == 0 || self.a_bins < 2 {
            return fail("class count must be positive and angle bins at least 2".into());
        }
        if self.decoder_layers == 0 {
            return fail("at least one decoder layer is required".into());
        }
        Ok(())
    }
}
